"""Dense feed-forward networks trained by SGD with optional weight noise.

The loss is the *summed* squared error ``sum_mu ||y_mu - yhat_mu||^2``
(no 1/2, no batch mean), so gradients scale with batch size and learning
rates must be chosen accordingly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .data import LabeledDataset, PointCloud, make_rng
from .errors import DataFormatError, TrainingError, UsageError

ACTIVATIONS = ("linear", "relu")
CHECKPOINT_FORMAT = "repdim-mlp"
CHECKPOINT_VERSION = 1


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    activation: str = "relu"
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise UsageError("layer weight must be a matrix")
        if self.activation not in ACTIVATIONS:
            raise UsageError(f"unknown activation {self.activation!r}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64).reshape(self.weight.shape[0])

    @property
    def shape(self):
        return self.weight.shape


@dataclass
class MlpModel:
    layers: List[DenseLayer] = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if b.weight.shape[1] != a.weight.shape[0]:
                raise UsageError(f"layer shapes do not compose: {a.shape} then {b.shape}")
        for layer in self.layers:
            if not np.all(np.isfinite(layer.weight)):
                raise UsageError("non-finite weights")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def widths(self) -> List[int]:
        return [self.input_dim] + [layer.weight.shape[0] for layer in self.layers]

    def copy(self) -> "MlpModel":
        return MlpModel([
            DenseLayer(l.weight.copy(), l.activation, None if l.bias is None else l.bias.copy())
            for l in self.layers
        ])

    def parameters(self) -> np.ndarray:
        parts = []
        for l in self.layers:
            parts.append(l.weight.ravel())
            if l.bias is not None:
                parts.append(l.bias)
        return np.concatenate(parts)

    def set_parameters(self, flat) -> None:
        pos = 0
        for l in self.layers:
            size = l.weight.size
            l.weight = np.asarray(flat[pos:pos + size], dtype=np.float64).reshape(l.weight.shape)
            pos += size
            if l.bias is not None:
                l.bias = np.asarray(flat[pos:pos + l.bias.size], dtype=np.float64)
                pos += l.bias.size


@dataclass(frozen=True)
class TrainConfig:
    """SGD schedule. The epoch-e learning rate is ``max(lr_start - lr_decay * e, 0)``."""

    learning_rate_start: float = 0.01
    learning_rate_decay_per_epoch: float = 0.0001
    epochs: int = 30
    batch_size: int = 64
    weight_noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate_start <= 0 or self.learning_rate_decay_per_epoch < 0:
            raise UsageError("learning rate must be positive and its decay non-negative")
        if self.epochs < 0 or self.batch_size < 1 or self.weight_noise_sigma < 0:
            raise UsageError("invalid epochs, batch size or noise level")

    def learning_rate(self, epoch: int) -> float:
        return max(self.learning_rate_start - self.learning_rate_decay_per_epoch * epoch, 0.0)


def _init_weight(rng, out_dim, in_dim, kind, scale):
    if kind == "identity":
        return np.eye(out_dim, in_dim)
    if kind == "random":
        return rng.standard_normal((out_dim, in_dim)) * (scale / np.sqrt(in_dim))
    raise UsageError(f"unknown init {kind!r}")


def build_mlp(
    widths: Sequence[int],
    activation: str = "relu",
    init: str = "random",
    scale: float = 1.0,
    bias: bool = False,
    seed=0,
) -> MlpModel:
    """Network with layer sizes ``widths`` (input first, output last).

    Hidden layers use ``activation``; the output layer is linear.
    ``init="random"`` draws every weight from N(0, scale^2 / fan_in).
    ``init="identity"`` draws only the input layer at random and sets all
    later layers to the (truncated or zero-padded) identity.
    """
    if len(widths) < 2 or min(widths) < 1:
        raise UsageError("need at least input and output widths, all >= 1")
    rng = make_rng(seed)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
        kind = "random" if (init == "random" or i == 0) else init
        w = _init_weight(rng, n_out, n_in, kind, scale)
        act = "linear" if i == len(widths) - 2 else activation
        layers.append(DenseLayer(w, act, np.zeros(n_out) if bias else None))
    return MlpModel(layers)


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else z


def _forward_batch(model: MlpModel, X: np.ndarray):
    pre, post = [], [X]
    a = X
    for layer in model.layers:
        z = a @ layer.weight.T
        if layer.bias is not None:
            z = z + layer.bias
        a = _act(z, layer.activation)
        pre.append(z)
        post.append(a)
    return pre, post


def forward(model: MlpModel, x):
    """Run the network on one input vector or a batch of row vectors.

    Returns ``(output, activations)`` where ``activations[l]`` is the
    post-activation of layer ``l + 1`` and ``activations[-1] is output``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise UsageError(f"input of shape {x.shape} does not match input width {model.input_dim}")
    _, post = _forward_batch(model, X)
    acts = [a[0] for a in post[1:]] if single else post[1:]
    return acts[-1], acts


def predict(model: MlpModel, X) -> np.ndarray:
    return forward(model, np.asarray(X, dtype=np.float64))[0]


def mse_loss(model: MlpModel, dataset: LabeledDataset) -> float:
    yhat = predict(model, dataset.inputs.points)
    r = dataset.targets - yhat
    return float(np.sum(r * r))


def gradients(model: MlpModel, X: np.ndarray, Y: np.ndarray):
    """Exact gradients of the summed squared error over the batch.

    Returns ``(loss, [(dW, db or None) per layer])``.
    """
    pre, post = _forward_batch(model, X)
    err = post[-1] - Y
    loss = float(np.sum(err * err))
    delta = 2.0 * err
    grads = [None] * model.n_layers
    for l in range(model.n_layers - 1, -1, -1):
        layer = model.layers[l]
        if layer.activation == "relu":
            delta = delta * (pre[l] > 0)
        dW = delta.T @ post[l]
        db = delta.sum(axis=0) if layer.bias is not None else None
        grads[l] = (dW, db)
        if l:
            delta = delta @ layer.weight
    return loss, grads


def _apply_update(model, grads, lr, sigma, rng):
    for layer, (dW, db) in zip(model.layers, grads):
        layer.weight -= lr * dW
        if db is not None:
            layer.bias -= lr * db
    if sigma > 0:
        for layer in model.layers:
            layer.weight += sigma * rng.standard_normal(layer.weight.shape)


def sgd_step(model: MlpModel, X, Y, lr: float, sigma: float = 0.0, rng=None) -> MlpModel:
    """One SGD update on batch ``(X, Y)``; returns a new model.

    After the gradient step, i.i.d. N(0, sigma^2) noise is added to every
    weight entry of every layer.
    """
    if lr <= 0 or sigma < 0:
        raise UsageError("need lr > 0 and sigma >= 0")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    new = model.copy()
    _, grads = gradients(new, X, Y)
    _apply_update(new, grads, lr, sigma, make_rng(0) if rng is None else rng)
    return new


def train(model: MlpModel, dataset: LabeledDataset, config: TrainConfig):
    """Mini-batch SGD with per-epoch reshuffling.

    Returns ``(trained_model, losses)``; ``losses[0]`` is the summed loss
    before training and ``losses[e]`` the summed loss after epoch ``e``.
    Training stops early once the scheduled learning rate reaches zero.
    The input model is not modified.
    """
    rng = make_rng(config.seed)
    model = model.copy()
    X, Y = dataset.inputs.points, dataset.targets
    n = len(X)
    losses = [mse_loss(model, dataset)]
    for epoch in range(config.epochs):
        lr = config.learning_rate(epoch)
        if lr <= 0:
            break
        order = rng.permutation(n)
        # overflow is reported as a TrainingError below, not as warnings
        with np.errstate(over="ignore", invalid="ignore"):
            for a in range(0, n, config.batch_size):
                idx = order[a:a + config.batch_size]
                _, grads = gradients(model, X[idx], Y[idx])
                _apply_update(model, grads, lr, config.weight_noise_sigma, rng)
            pre, post = _forward_batch(model, X)
            loss = float(np.sum((Y - post[-1]) ** 2))
        # relu can hide an overflowed layer from the loss, so check them all
        if not (np.isfinite(loss) and all(np.all(np.isfinite(z)) for z in pre)):
            raise TrainingError(f"training diverged at epoch {epoch + 1} (loss {loss})", epoch + 1)
        losses.append(loss)
    return model, np.array(losses)


def extract_activations(model: MlpModel, cloud: PointCloud, layer_index: int, pre_activation: bool = False) -> PointCloud:
    """Representation of every input at ``layer_index`` (0 = the inputs).

    With ``pre_activation`` the layer's affine output before the
    nonlinearity is returned instead.
    """
    if not 0 <= layer_index <= model.n_layers:
        raise UsageError(f"layer index {layer_index} outside 0..{model.n_layers}")
    if layer_index == 0:
        return cloud
    pre, post = _forward_batch(model, cloud.points)
    pts = pre[layer_index - 1] if pre_activation else post[layer_index]
    return cloud.with_points(pts)


# --------------------------------------------------------------------------
# checkpoints


def model_to_dict(model: MlpModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layers": [
            {
                "shape": list(l.weight.shape),
                "activation": l.activation,
                "weights": l.weight.ravel().tolist(),
                "bias": None if l.bias is None else l.bias.tolist(),
            }
            for l in model.layers
        ],
    }


def model_from_dict(doc: dict) -> MlpModel:
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise DataFormatError("not a repdim-mlp version 1 checkpoint")
    layers = []
    try:
        for entry in doc["layers"]:
            out_dim, in_dim = entry["shape"]
            w = np.array(entry["weights"], dtype=np.float64)
            if w.size != out_dim * in_dim:
                raise DataFormatError("checkpoint weight count does not match shape")
            layers.append(DenseLayer(w.reshape(out_dim, in_dim), entry["activation"], entry.get("bias")))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataFormatError):
            raise
        raise DataFormatError(f"malformed checkpoint: {exc}") from None
    return MlpModel(layers)


def save_model(path, model: MlpModel) -> None:
    # json writes floats with repr, which round-trips float64 exactly
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> MlpModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON checkpoint ({exc})") from None
    return model_from_dict(doc)
