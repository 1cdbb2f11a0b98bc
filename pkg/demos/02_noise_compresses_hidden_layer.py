"""Readout noise removes the part of the hidden layer the readout cannot see.

Take a linear two-layer network ``yhat = w2 W1 x`` with the readout ``w2``
fixed. Any hidden component orthogonal to the rows of ``w2`` is invisible in
the output, so plain gradient descent has no reason to remove it. Jitter
``w2`` on every sample, though, and the averaged loss picks up a penalty
``sigma^2 * sum ||h||^2``: invisible components now cost something and are
driven to zero.

The script checks the averaged loss by Monte Carlo, then trains ``W1`` with
and without noise and reports how much of the hidden activity lies outside
the readout's row space.

Run:  python demos/02_noise_compresses_hidden_layer.py   (about a minute)
"""

import numpy as np

from repdim.data import make_rng
from repdim.theory import (
    TwoLayerProblem,
    closed_form_w1,
    compression_ratio,
    effective_loss,
    noisy_loss_mc,
    random_problem,
    train_w1_noisy_readout,
)

p = random_problem(P=15, d=20, c=3, H=10, sigma=0.05, seed=0)
W = make_rng(1).standard_normal((p.H, p.d)) / np.sqrt(p.d)

mean, se = noisy_loss_mc(p, W, trials=100_000, seed=2)
print("noise-averaged loss for a random W1")
print(f"  Monte Carlo   {mean:.5f} +- {se:.5f}")
print(f"  closed form   {effective_loss(p, W):.5f}\n")

target = closed_form_w1(p)
print("training W1 (20 inputs, 10 hidden units, 3 outputs, 15 samples)")
W_noisy = train_w1_noisy_readout(p, None, steps=100_000, seed=3)
gap = np.linalg.norm(W_noisy - target) / np.linalg.norm(target)
print(f"  noisy readout, from zero:   distance to closed form {gap:.4f}, "
      f"max ||h_perp||/||h|| = {compression_ratio(p, W_noisy):.4f}")

clean = TwoLayerProblem(p.X, p.Y, p.w2, 0.0)
W_clean = train_w1_noisy_readout(clean, W, steps=100_000, seed=4)
print(f"  no noise, from random W1:   max ||h_perp||/||h|| = {compression_ratio(clean, W_clean):.4f}")
W_mixed = train_w1_noisy_readout(p, W, steps=100_000, seed=5)
print(f"  noisy, same random W1:      max ||h_perp||/||h|| = {compression_ratio(p, W_mixed):.4f}")
print("\nWithout noise the random start's invisible part survives training; with noise it decays.")
