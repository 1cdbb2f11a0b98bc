"""Dimension of each class's representation, layer by layer, before and after training.

A 7-layer relu network of width 200 (input weights random, all later
weights the identity) is trained on a 10-class synthetic dataset: each class
is a curved 4-d manifold in 64 coordinates plus isotropic noise. We train
it twice from the same start, once plain and once with Gaussian noise added
to every weight after each update, and print the class-averaged local
dimension at every layer.

At initialisation the identity layers just copy the first hidden layer, so
the profile is flat. Training compresses the later layers, and in this
setting the noisy run compresses the last hidden layer further. The relu
ratios printed at the end come out below one here: the trained networks
compress by silencing most units for each class, so the nonlinearity
removes variation rather than adding it.

The same experiment runs from the command line with
``python -m repdim run demos/deep_run.json``.

Run:  python demos/03_deep_network_profile.py   (under a minute)
"""

import warnings

import numpy as np

from repdim import TrainConfig, build_mlp, probe_layers, relu_expansion_ratios, train
from repdim.data import LabeledDataset, generate_class_manifolds

warnings.simplefilter("ignore")

cloud = generate_class_manifolds(300, n_classes=10, latent_dim=4, ambient_dim=64, noise=0.2, seed=0)
data = LabeledDataset.from_cloud(cloud)
model = build_mlp([64] + [200] * 7 + [10], "relu", "identity", seed=0)
layers = list(range(model.n_layers + 1))


def profile(m):
    return np.array([s.mean for s in probe_layers(m, data, layers, subsample=None).summary])


runs = {"init": model}
for sigma in (0.0, 0.005):
    cfg = TrainConfig(5e-4, 5e-4 / 60, 60, 512, sigma, seed=0)
    runs[f"sigma={sigma}"], losses = train(model, data, cfg)
    print(f"sigma={sigma}: summed loss {losses[0]:.0f} -> {losses[-1]:.1f}")

print("\nclass-averaged local ID per layer (0 = input, 8 = readout)")
print(f"{'layer':<12}" + "  ".join(f"{l:>5d}" for l in layers))
for name, m in runs.items():
    print(f"{name:<12}" + "  ".join(f"{v:5.2f}" for v in profile(m)))

hidden = layers[1:-1]
for name in ("sigma=0.0", "sigma=0.005"):
    m = runs[name]
    pre = probe_layers(m, data, hidden, subsample=None, pre_activation=True)
    post = probe_layers(m, data, hidden, subsample=None)
    r = relu_expansion_ratios(pre, post)
    print(f"\n{name}: post/pre relu ID ratio {r.mean:.3f} +- {r.std:.3f}")
