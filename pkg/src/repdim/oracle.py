"""Numerical checks of the two-layer noisy-readout theory.

Each check returns plain numbers so the same code serves the ``oracle``
command and the test-suite.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np

from .data import make_rng
from .theory import (
    TwoLayerProblem,
    closed_form_w1,
    compression_ratio,
    effective_loss,
    noisy_loss_mc,
    optimal_hidden,
    orthogonal_component,
    random_problem,
    readout_projector,
    train_w1_noisy_readout,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: str
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{tag}] {self.name}: {self.value:.6g} vs {self.tolerance}{extra}"


def averaged_loss_agreement(n_instances=50, trials=100_000, seed=0):
    """Monte Carlo noisy loss against the closed-form average.

    Returns ``(n_within_3se, z_scores)``. Every instance has the default
    shape, its own readout, noise level and random W1.
    """
    z = np.empty(n_instances)
    root = np.random.SeedSequence(seed)
    for i, ss in enumerate(root.spawn(n_instances)):
        s_prob, s_w, s_mc = ss.spawn(3)
        rng = np.random.Generator(np.random.PCG64(s_w))
        p = random_problem(sigma=float(rng.uniform(0.05, 1.0)), seed=np.random.Generator(np.random.PCG64(s_prob)))
        W1 = rng.standard_normal((p.H, p.d)) / np.sqrt(p.d)
        mean, se = noisy_loss_mc(p, W1, trials, seed=int(s_mc.generate_state(1)[0]))
        z[i] = (mean - effective_loss(p, W1)) / se
    return int(np.sum(np.abs(z) < 3)), z


def minimality(n_perturb=100, seed=0):
    """Smallest loss increase over random perturbations of the closed form."""
    p = random_problem(seed=seed)
    W = closed_form_w1(p)
    base = effective_loss(p, W)
    rng = make_rng(seed + 1)
    gaps = [
        effective_loss(p, W + rng.standard_normal(W.shape) * rng.choice([1e-3, 1e-1, 1.0])) - base
        for _ in range(n_perturb)
    ]
    return float(np.min(gaps))


def hidden_nullspace(n_instances=20, seed=0):
    worst = 0.0
    for i in range(n_instances):
        p = random_problem(sigma=0.05 + 0.1 * i, seed=seed + i)
        for y in p.Y:
            worst = max(worst, float(np.linalg.norm(orthogonal_component(optimal_hidden(p, y), p.w2))))
    return worst


def pythagoras(n_instances=100, seed=0):
    rng = make_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        w2 = rng.standard_normal((3, 10))
        h = rng.standard_normal(10)
        ph = readout_projector(w2) @ h
        hp = orthogonal_component(h, w2)
        worst = max(worst, abs(h @ h - ph @ ph - hp @ hp))
    return worst


@dataclass(frozen=True)
class ConvergenceResult:
    frobenius: float
    ratio_noisy: float
    ratio_clean: float
    ratio_noisy_random_init: float


def sgd_convergence(steps=200_000, seed=0, sigma=0.05, lr=2e-3):
    """Train W1 with readout noise and compare with the closed form.

    The noisy run starts from W1 = 0: with P < d, SGD never changes the
    component of W1 that annihilates every training input, so only the
    zero start can reach the minimum-norm closed form. The clean run and a
    second noisy run start from the same random N(0, 1/d) matrix.
    """
    p = random_problem(P=15, d=20, c=3, H=10, sigma=sigma, seed=seed)
    target = closed_form_w1(p)
    W = train_w1_noisy_readout(p, None, steps, lr, seed=seed + 1)
    W_rand = make_rng(seed + 2).standard_normal((p.H, p.d)) / np.sqrt(p.d)
    clean_p = TwoLayerProblem(p.X, p.Y, p.w2, 0.0)
    W_clean = train_w1_noisy_readout(clean_p, W_rand, steps, lr, seed=seed + 3)
    W_noisy_rand = train_w1_noisy_readout(p, W_rand, steps, lr, seed=seed + 4)
    return ConvergenceResult(
        float(np.linalg.norm(W - target) / np.linalg.norm(target)),
        compression_ratio(p, W),
        compression_ratio(clean_p, W_clean),
        compression_ratio(p, W_noisy_rand),
    )


def run_oracle_suite(quick: bool = False, seed: int = 0, out=sys.stdout) -> bool:
    """Run every check, print one line each, return True if all pass."""
    n_inst, trials = (10, 20_000) if quick else (50, 100_000)
    need = int(np.ceil(0.94 * n_inst))
    results = []
    hits, z = averaged_loss_agreement(n_inst, trials, seed)
    results.append(CheckResult(
        "noise-averaged loss (instances within 3 SE)", hits >= need, hits, f">= {need} of {n_inst}",
        f"max |z| {np.max(np.abs(z)):.2f}",
    ))
    gap = minimality(seed=seed)
    results.append(CheckResult("closed-form W1 minimality (min loss increase)", gap >= -1e-12, gap, ">= -1e-12"))
    worst = hidden_nullspace(seed=seed)
    results.append(CheckResult("optimal hidden vector orthogonal part", worst < 1e-10, worst, "< 1e-10"))
    worst = pythagoras(seed=seed)
    results.append(CheckResult("projector Pythagoras residual", worst < 1e-10, worst, "< 1e-10"))
    conv = sgd_convergence(steps=60_000 if quick else 200_000, seed=seed)
    results.append(CheckResult("noisy SGD to closed form (relative Frobenius)", conv.frobenius < 0.05, conv.frobenius, "< 0.05"))
    results.append(CheckResult("noisy SGD compression ratio", conv.ratio_noisy < 0.05, conv.ratio_noisy, "< 0.05"))
    results.append(CheckResult("noise-free SGD compression ratio", conv.ratio_clean > 0.2, conv.ratio_clean, "> 0.2"))
    results.append(CheckResult(
        "noise lowers ratio from the same random start",
        conv.ratio_noisy_random_init < conv.ratio_clean, conv.ratio_noisy_random_init,
        f"< {conv.ratio_clean:.4g}",
    ))
    for r in results:
        print(r.line(), file=out)
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} checks passed", file=out)
    return ok
