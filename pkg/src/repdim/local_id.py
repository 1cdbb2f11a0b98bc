"""Local intrinsic dimension from second-to-first neighbour distance ratios.

For points sampled from a d-dimensional manifold, the ratio
rho = r2 / r1 of second to first nearest-neighbour distance follows a
Pareto law with CDF F(rho) = 1 - rho^(-d), independent of the local
density. Hence -log(1 - F) = d log(rho): a straight line through the
origin whose slope is the dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

import numpy as np

from .data import PointCloud
from .errors import DegenerateDataError, EstimationError, UsageError
from .neighbors import NeighborTable, knn

MIN_POINTS = 20
Z95 = 1.959963984540054


@dataclass(frozen=True)
class IdEstimate:
    dimension: float
    ci_low: float
    ci_high: float
    method: str
    n_used: int
    diagnostics: dict = field(default_factory=dict, compare=False, repr=False)

    def as_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "method": self.method,
            "n_used": self.n_used,
        }


def nn_ratios(table: NeighborTable, return_dropped: bool = False):
    """Per-point ratio r2/r1; points whose first neighbour is a duplicate are dropped."""
    if table.k < 2:
        raise UsageError("nn_ratios needs at least two neighbours per point")
    r1 = table.distances[:, 0]
    r2 = table.distances[:, 1]
    ok = r1 > 0
    if table.n and not ok.any():
        raise EstimationError("no usable ratios: every point has a duplicate")
    ratios = r2[ok] / r1[ok]
    if return_dropped:
        return ratios, int((~ok).sum())
    return ratios


def fit_ratio_scaling(ratios, discard_fraction: float = 0.1):
    """Through-origin least squares of -log(1 - F) on log(rho).

    Returns ``(slope, standard_error, x, y)`` where ``x, y`` are the fitted
    pairs. The empirical CDF is ``F_i = i / (M + 1)`` over the sorted ratios,
    and the top ``ceil(discard_fraction * M)`` ratios are left out.
    """
    if not 0 <= discard_fraction < 1:
        raise UsageError("discard_fraction must lie in [0, 1)")
    mu = np.sort(np.asarray(ratios, dtype=np.float64))
    m = len(mu)
    cdf = np.arange(1, m + 1) / (m + 1)
    keep = m - ceil(discard_fraction * m)
    x = np.log(mu[:keep])
    y = -np.log1p(-cdf[:keep])
    sxx = float(x @ x)
    if keep < 2 or sxx == 0.0:
        raise DegenerateDataError("all neighbour-distance ratios equal 1")
    slope = float(x @ y) / sxx
    resid = y - slope * x
    se = float(np.sqrt(resid @ resid / (keep - 1) / sxx))
    return slope, se, x, y


def estimate_local_id(cloud: PointCloud, discard_fraction: float = 0.1, table: NeighborTable = None) -> IdEstimate:
    """Local (r -> 0) intrinsic dimension with a 95% confidence band.

    Parameters
    ----------
    cloud : PointCloud
    discard_fraction : float
        Fraction of the largest ratios dropped before fitting; the extreme
        tail is dominated by finite-sample noise.
    table : NeighborTable, optional
        Precomputed neighbours (needs ``k >= 2``); computed when omitted.
    """
    if cloud.n < 3:
        raise EstimationError(f"local estimate needs at least {MIN_POINTS} points, got {cloud.n}")
    if table is None:
        table = knn(cloud, 2)
    ratios, dropped = nn_ratios(table, return_dropped=True)
    if len(ratios) < MIN_POINTS:
        raise EstimationError(
            f"local estimate needs at least {MIN_POINTS} non-duplicate points, got {len(ratios)}"
        )
    slope, se, x, y = fit_ratio_scaling(ratios, discard_fraction)
    if slope <= 0:
        raise DegenerateDataError("non-positive fitted dimension")
    half = Z95 * se
    diagnostics = {
        "standard_error": se,
        "n_duplicates_dropped": dropped,
        "n_discarded_tail": len(ratios) - len(x),
        "log_ratio": x,
        "neg_log_survival": y,
    }
    return IdEstimate(slope, slope - half, slope + half, "local", len(ratios), diagnostics)
