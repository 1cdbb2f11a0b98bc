"""Closed-form quantities for a two-layer network with a noisy readout.

Setting: hidden activity ``h = phi(W1 x)``, output ``yhat = w2 h``, summed
squared error over ``P`` samples. Perturbing the readout per sample,
``w2 -> w2 + sigma * xi_mu`` with unit Gaussian ``xi_mu``, and averaging
over the noise gives

    <L> = sum_mu ||y_mu - w2 h_mu||^2 + sigma^2 * Tr(C),
    C_jk = sum_mu h_mu[j] h_mu[k],

so the noise acts as an L2 penalty on the hidden activity. Each of the
``c * H`` readout entries is perturbed with standard deviation
``sigma / sqrt(c)``; with unit-variance entries every output row would add
its own ``sigma^2 * ||h||^2`` and the penalty would read ``c sigma^2 Tr(C)``. For linear
``phi`` the minimiser over ``W1`` has the closed form implemented in
:func:`closed_form_w1`, and its hidden vectors have no component
orthogonal to the row space of ``w2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import make_rng
from .errors import UsageError

PINV_RTOL = 1e-12


@dataclass(frozen=True)
class TwoLayerProblem:
    X: np.ndarray  # (P, d)
    Y: np.ndarray  # (P, c)
    w2: np.ndarray  # (c, H)
    sigma: float = 0.0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        Y = np.atleast_2d(np.asarray(self.Y, dtype=np.float64))
        w2 = np.atleast_2d(np.asarray(self.w2, dtype=np.float64))
        if X.shape[0] != Y.shape[0] or Y.shape[1] != w2.shape[0] or X.shape[0] < 1:
            raise UsageError(f"inconsistent shapes X{X.shape} Y{Y.shape} w2{w2.shape}")
        if self.sigma < 0:
            raise UsageError("sigma must be non-negative")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "w2", w2)

    @property
    def P(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def c(self):
        return self.Y.shape[1]

    @property
    def H(self):
        return self.w2.shape[1]


def readout_noise_std(problem: TwoLayerProblem) -> float:
    """Per-entry standard deviation of the readout noise, ``sigma / sqrt(c)``."""
    return problem.sigma / np.sqrt(problem.c)


def random_problem(P=15, d=20, c=3, H=10, sigma=0.05, seed=0) -> TwoLayerProblem:
    """Gaussian inputs, one-hot targets and a readout drawn as N(0, 1/H)."""
    rng = make_rng(seed)
    X = rng.standard_normal((P, d))
    Y = np.eye(c)[rng.integers(0, c, P)]
    w2 = rng.standard_normal((c, H)) / np.sqrt(H)
    return TwoLayerProblem(X, Y, w2, sigma)


def pinv(A, rtol: float = PINV_RTOL) -> np.ndarray:
    """Moore-Penrose pseudo-inverse by SVD.

    Singular values at or below ``rtol * max(s)`` are treated as zero.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    if A.size == 0:
        return A.T.copy()
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    cutoff = rtol * s.max() if s.size else 0.0
    inv = np.zeros_like(s)
    keep = s > cutoff
    inv[keep] = 1.0 / s[keep]
    return (Vt.T * inv) @ U.T


def hidden(problem: TwoLayerProblem, W1, activation: str = "linear") -> np.ndarray:
    """Hidden vectors ``h_mu`` as rows, shape (P, H)."""
    W1 = np.atleast_2d(np.asarray(W1, dtype=np.float64))
    if W1.shape != (problem.H, problem.d):
        raise UsageError(f"W1 shape {W1.shape} != {(problem.H, problem.d)}")
    h = problem.X @ W1.T
    return np.maximum(h, 0.0) if activation == "relu" else h


def _hidden_arg(problem, W1, h):
    if h is None:
        if W1 is None:
            raise UsageError("need W1 or precomputed hidden vectors")
        return hidden(problem, W1)
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    if h.shape != (problem.P, problem.H):
        raise UsageError(f"hidden shape {h.shape} != {(problem.P, problem.H)}")
    return h


def effective_loss(problem: TwoLayerProblem, W1=None, h=None) -> float:
    """Noise-averaged loss: task error plus ``sigma^2 * Tr(C)``."""
    h = _hidden_arg(problem, W1, h)
    r = problem.Y - h @ problem.w2.T
    C = h.T @ h
    return float(np.sum(r * r) + problem.sigma ** 2 * np.trace(C))


def noisy_loss(problem: TwoLayerProblem, h: np.ndarray, xi: np.ndarray) -> float:
    """Loss with per-sample unit readout noise ``xi`` of shape (P, c, H)."""
    w = problem.w2[None] + readout_noise_std(problem) * xi
    yhat = np.einsum("pch,ph->pc", w, h)
    r = problem.Y - yhat
    return float(np.sum(r * r))


def noisy_loss_mc(problem: TwoLayerProblem, W1=None, trials: int = 10_000, seed=0, h=None, chunk: int = 2048):
    """Monte Carlo mean of the noisy-readout loss and its standard error.

    Every trial draws a fresh (P, c, H) unit-Gaussian tensor, scaled by
    :func:`readout_noise_std`. Chunks of trials use independent child
    streams of ``seed``.
    """
    if trials < 1:
        raise UsageError("need at least one trial")
    h = _hidden_arg(problem, W1, h)
    P, c, H = problem.P, problem.c, problem.H
    n_chunks = -(-trials // chunk)
    streams = np.random.SeedSequence(seed).spawn(n_chunks)
    values = np.empty(trials)
    pos = 0
    for ss in streams:
        m = min(chunk, trials - pos)
        xi = np.random.Generator(np.random.PCG64(ss)).standard_normal((m, P, c, H))
        w = problem.w2[None, None] + readout_noise_std(problem) * xi
        yhat = np.einsum("tpch,ph->tpc", w, h)
        r = problem.Y[None] - yhat
        values[pos:pos + m] = np.sum(r * r, axis=(1, 2))
        pos += m
    mean = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return mean, se


def _readout_solve(problem):
    # w2^T (w2 w2^T + s^2 I)^+ equals (w2^T w2 + s^2 I)^+ w2^T, but its range
    # lies in the readout row space exactly rather than up to roundoff
    w2 = problem.w2
    return w2.T @ pinv(w2 @ w2.T + problem.sigma ** 2 * np.eye(problem.c))


def closed_form_w1(problem: TwoLayerProblem) -> np.ndarray:
    """Minimiser of the effective loss over W1 for a linear hidden layer.

    ``(w2^T w2 + sigma^2 I)^+ w2^T Y^T X (X^T X)^+``; with ``P < d`` this is
    the minimum-norm minimiser. Evaluated in the equivalent form
    ``w2^T (w2 w2^T + sigma^2 I)^+ Y^T X (X^T X)^+``.
    """
    X, Y = problem.X, problem.Y
    return _readout_solve(problem) @ Y.T @ X @ pinv(X.T @ X)


def optimal_hidden(problem: TwoLayerProblem, y) -> np.ndarray:
    """Hidden vector(s) minimising the effective loss for target(s) ``y``.

    ``y`` may be one c-vector or a (P, c) matrix of rows.
    """
    y = np.asarray(y, dtype=np.float64)
    A = _readout_solve(problem)
    return A @ y if y.ndim == 1 else y @ A.T


def readout_projector(w2, rtol: float = PINV_RTOL) -> np.ndarray:
    """Orthogonal projector onto the row space of ``w2`` (H x H)."""
    w2 = np.atleast_2d(np.asarray(w2, dtype=np.float64))
    _, s, Vt = np.linalg.svd(w2, full_matrices=False)
    V = Vt[s > rtol * (s.max() if s.size else 0.0)]
    return V.T @ V


def orthogonal_component(h, w2) -> np.ndarray:
    """Part of ``h`` (vector or rows) orthogonal to the readout row space."""
    h = np.asarray(h, dtype=np.float64)
    Pi = readout_projector(w2)
    return h - h @ Pi


def compression_ratio(problem: TwoLayerProblem, W1) -> float:
    """``max_mu ||h_perp|| / ||h||`` over the training inputs."""
    h = hidden(problem, W1)
    hp = orthogonal_component(h, problem.w2)
    norms = np.linalg.norm(h, axis=1)
    norms[norms == 0] = np.inf
    return float(np.max(np.linalg.norm(hp, axis=1) / norms))


def train_w1_noisy_readout(
    problem: TwoLayerProblem,
    W1_init=None,
    steps: int = 100_000,
    lr: float = 2e-3,
    decay_steps: float = None,
    seed=0,
) -> np.ndarray:
    """Full-batch SGD on W1 with the readout fixed and perturbed per sample.

    Each step draws fresh readout noise for every sample and follows the
    gradient of the resulting noisy loss, so the expected update is the
    gradient of :func:`effective_loss`. The step size decays as
    ``lr / (1 + t / decay_steps)`` (default ``decay_steps = steps / 10``).
    """
    rng = make_rng(seed)
    W = np.zeros((problem.H, problem.d)) if W1_init is None else np.array(W1_init, dtype=np.float64)
    X, Y, w2, s = problem.X, problem.Y, problem.w2, readout_noise_std(problem)
    P, c, H = problem.P, problem.c, problem.H
    tau = steps / 10 if decay_steps is None else decay_steps
    for t in range(steps):
        eta = lr / (1.0 + t / tau)
        if s > 0:
            w = w2[None] + s * rng.standard_normal((P, c, H))
            h = X @ W.T
            err = Y - np.einsum("pch,ph->pc", w, h)
            gh = -2.0 * np.einsum("pch,pc->ph", w, err)
        else:
            err = Y - X @ W.T @ w2.T
            gh = -2.0 * err @ w2
        W -= eta * gh.T @ X
    return W
