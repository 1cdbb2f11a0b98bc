"""Per-layer, per-class dimension profiles of a network's representations.

Every requested layer's activations are split by class, each class is
subsampled, and each estimator is run on every class separately. Layer
summaries average over classes and carry two bands: a 95% interval for the
class mean (``mean +- 1.96 std / sqrt(n_classes)``) and a two standard
deviation band (``mean +- 2 std``).
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data import LabeledDataset, PointCloud, make_rng
from .errors import DataFormatError, EstimationError, UsageError
from .global_id import estimate_global_id
from .local_id import estimate_local_id
from .nn import MlpModel, extract_activations

METHODS = ("local", "global")
Z95 = 1.959963984540054
CONSISTENCY_TOL = 1e-12
ENTRY_FIELDS = (
    "layer_index", "layer_name", "layer_width", "class_id", "method",
    "dimension", "ci_low", "ci_high", "n_points", "flagged", "message",
)
SUMMARY_FIELDS = (
    "layer_index", "layer_name", "method", "mean", "ci_low", "ci_high",
    "band2_low", "band2_high", "std", "n_classes",
)


@dataclass(frozen=True)
class ProbeEntry:
    layer_index: int
    layer_name: str
    layer_width: int
    class_id: int
    method: str
    dimension: float
    ci_low: float
    ci_high: float
    n_points: int
    flagged: bool = False
    message: str = ""


@dataclass(frozen=True)
class LayerSummary:
    layer_index: int
    layer_name: str
    method: str
    mean: float
    ci_low: float
    ci_high: float
    band2_low: float
    band2_high: float
    std: float
    n_classes: int


def summarise(entries: Sequence[ProbeEntry]) -> List[LayerSummary]:
    """Class averages per (layer, method), skipping flagged entries."""
    groups: Dict[tuple, list] = {}
    names = {}
    for e in entries:
        key = (e.layer_index, e.method)
        groups.setdefault(key, [])
        names[key] = e.layer_name
        if not e.flagged:
            groups[key].append(e.dimension)
    out = []
    for (layer, method), dims in sorted(groups.items(), key=lambda kv: (kv[0][0], METHODS.index(kv[0][1]))):
        n = len(dims)
        if n == 0:
            nan = float("nan")
            out.append(LayerSummary(layer, names[layer, method], method, nan, nan, nan, nan, nan, nan, 0))
            continue
        mean = float(np.mean(dims))
        std = float(np.std(dims, ddof=1)) if n > 1 else 0.0
        half = Z95 * std / math.sqrt(n)
        out.append(LayerSummary(
            layer, names[layer, method], method, mean, mean - half, mean + half,
            mean - 2 * std, mean + 2 * std, std, n,
        ))
    return out


@dataclass
class ProbeReport:
    entries: List[ProbeEntry]
    summary: List[LayerSummary] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    timestamp: str = ""

    def __post_init__(self):
        if not self.summary:
            self.summary = summarise(self.entries)

    def check_consistency(self) -> None:
        """Class averages must be recomputable from the entries."""
        for s, t in zip(self.summary, summarise(self.entries)):
            same = (s.mean == t.mean) or (math.isnan(s.mean) and math.isnan(t.mean)) or abs(s.mean - t.mean) <= CONSISTENCY_TOL
            if (s.layer_index, s.method) != (t.layer_index, t.method) or not same:
                raise EstimationError(f"report summary for layer {s.layer_index} ({s.method}) disagrees with entries")

    def series(self, method: str = "local"):
        """``(layer_indices, class-averaged dimensions)`` for one method."""
        rows = [s for s in self.summary if s.method == method]
        return np.array([s.layer_index for s in rows]), np.array([s.mean for s in rows])

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "metadata": self.metadata,
            "entries": [asdict(e) for e in self.entries],
            "summary": [asdict(s) for s in self.summary],
        }

    def to_json(self) -> str:
        self.check_consistency()
        return json.dumps(self.to_dict(), indent=1, allow_nan=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "ProbeReport":
        try:
            entries = [ProbeEntry(**e) for e in doc["entries"]]
            summary = [LayerSummary(**s) for s in doc.get("summary", [])]
        except (KeyError, TypeError) as exc:
            raise DataFormatError(f"malformed probe report: {exc}") from None
        return cls(entries, summary, doc.get("metadata", {}), doc.get("timestamp", ""))

    def entries_csv(self) -> str:
        return _to_csv(ENTRY_FIELDS, [asdict(e) for e in self.entries])

    def profile_csv(self) -> str:
        return _to_csv(SUMMARY_FIELDS, [asdict(s) for s in self.summary])


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "1" if v else "0"
    return str(v)


def _to_csv(fields, rows, extra: Optional[dict] = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = list(extra or {}) + list(fields)
    w.writerow(head)
    for r in rows:
        w.writerow([_cell(v) for v in list((extra or {}).values()) + [r[f] for f in fields]])
    return buf.getvalue()


def now_stamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def layer_name(model: MlpModel, index: int, pre_activation: bool = False) -> str:
    if index == 0:
        return "input"
    act = model.layers[index - 1].activation
    return f"dense{index}-{'pre' if pre_activation else act}"


def _subsample_indices(labels, subsample, seed):
    """Per-class sorted indices, at most ``subsample`` per class."""
    out = []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        if subsample is not None and len(idx) > subsample:
            rng = make_rng([int(seed), int(lab)])
            idx = np.sort(rng.choice(idx, subsample, replace=False))
        out.append((int(lab), idx))
    return out


def _estimate(cloud: PointCloud, method: str, options: dict):
    if method == "local":
        return estimate_local_id(cloud, **options.get("local", {}))
    return estimate_global_id(cloud, **options.get("global", {}))


def probe_layers(
    model: MlpModel,
    dataset,
    layers: Optional[Sequence[int]] = None,
    methods: Sequence[str] = ("local",),
    subsample: Optional[int] = 1000,
    seed: int = 0,
    pre_activation: bool = False,
    options: Optional[dict] = None,
    n_jobs: int = 1,
) -> ProbeReport:
    """Estimate the dimension of every class manifold at every requested layer.

    Parameters
    ----------
    model : MlpModel
    dataset : PointCloud or LabeledDataset
        Labelled inputs.
    layers : sequence of int, optional
        Layer indices (0 = inputs); all layers by default.
    methods : sequence of {"local", "global"}
    subsample : int or None
        Maximum points per class, drawn once (seeded, without replacement)
        and reused for every layer.
    pre_activation : bool
        Probe each layer's input to its nonlinearity instead of its output.
    options : dict, optional
        Keyword arguments per method, e.g. ``{"global": {"d_max": 20}}``.
    n_jobs : int
        Worker threads for the independent (layer, class, method) jobs.

    Classes too small for an estimator produce flagged entries with NaN
    dimension instead of failing the whole probe.
    """
    cloud = dataset.inputs if isinstance(dataset, LabeledDataset) else dataset
    if cloud.labels is None:
        raise UsageError("probing needs labelled inputs")
    layers = list(range(model.n_layers + 1)) if layers is None else [int(l) for l in layers]
    for l in layers:
        if not 0 <= l <= model.n_layers:
            raise UsageError(f"layer index {l} outside 0..{model.n_layers}")
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {METHODS}")
    options = options or {}
    picks = _subsample_indices(cloud.labels, subsample, seed)
    keep = np.concatenate([idx for _, idx in picks])
    base = cloud.subset(keep)
    offsets = np.cumsum([0] + [len(idx) for _, idx in picks])

    acts = {l: extract_activations(model, base, l, pre_activation and l > 0) for l in layers}
    jobs = [(l, ci, m) for l in layers for ci in range(len(picks)) for m in methods]

    def work(job):
        l, ci, m = job
        lab = picks[ci][0]
        sub = PointCloud(acts[l].points[offsets[ci]:offsets[ci + 1]])
        name = layer_name(model, l, pre_activation and l > 0)
        width = acts[l].dim
        try:
            est = _estimate(sub, m, options)
        except EstimationError as exc:
            nan = float("nan")
            return ProbeEntry(l, name, width, lab, m, nan, nan, nan, sub.n, True, str(exc))
        return ProbeEntry(l, name, width, lab, m, float(est.dimension), float(est.ci_low),
                          float(est.ci_high), est.n_used, False, "")

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            entries = list(pool.map(work, jobs))
    else:
        entries = [work(j) for j in jobs]
    meta = {
        "layers": layers,
        "methods": list(methods),
        "subsample": subsample,
        "seed": seed,
        "pre_activation": bool(pre_activation),
        "n_flagged": sum(e.flagged for e in entries),
    }
    return ProbeReport(entries, metadata=meta, timestamp=now_stamp())


@dataclass(frozen=True)
class PhaseSummary:
    peak_index: int
    peak_layer: int
    expansion_span: tuple
    compression_span: tuple
    monotonicity: float

    def as_dict(self) -> dict:
        return {
            "peak_index": self.peak_index,
            "peak_layer": self.peak_layer,
            "expansion_span": list(self.expansion_span),
            "compression_span": list(self.compression_span),
            "monotonicity": self.monotonicity,
        }


def detect_phases(series, method: str = "local", layers=None) -> PhaseSummary:
    """Locate the dimension peak and score how cleanly the profile rises then falls.

    ``series`` is a :class:`ProbeReport` (its class-averaged profile for
    ``method`` is used) or a sequence of values. The peak is the first
    maximum. The score is the fraction of steps that strictly increase
    before the peak or strictly decrease after it.
    """
    if isinstance(series, ProbeReport):
        layers, values = series.series(method)
    else:
        values = np.asarray(series, dtype=np.float64)
        layers = np.arange(len(values)) if layers is None else np.asarray(layers)
    if len(values) < 3:
        raise UsageError("phase detection needs at least three layers")
    if np.any(np.isnan(values)):
        raise EstimationError("class-averaged profile contains missing layers")
    peak = int(np.argmax(values))
    steps = np.diff(values)
    good = int(np.sum(steps[:peak] > 0) + np.sum(steps[peak:] < 0))
    return PhaseSummary(
        peak, int(layers[peak]),
        (int(layers[0]), int(layers[peak])),
        (int(layers[peak]), int(layers[-1])),
        good / len(steps),
    )


@dataclass(frozen=True)
class RatioSummary:
    ratios: np.ndarray
    keys: list
    mean: float
    std: float
    n_skipped: int

    def as_dict(self) -> dict:
        return {
            "ratios": [float(r) for r in self.ratios],
            "keys": [list(k) for k in self.keys],
            "mean": self.mean,
            "std": self.std,
            "n_skipped": self.n_skipped,
        }


def relu_expansion_ratios(report_pre: ProbeReport, report_post: ProbeReport) -> RatioSummary:
    """Per (layer, class, method): post-nonlinearity over pre-nonlinearity dimension.

    Entries without a usable partner in the other report are skipped and
    counted (with a warning).
    """
    pre = {(e.layer_index, e.class_id, e.method): e for e in report_pre.entries}
    post = {(e.layer_index, e.class_id, e.method): e for e in report_post.entries}
    keys, ratios = [], []
    for key in sorted(set(pre) | set(post), key=lambda k: (k[0], k[1], METHODS.index(k[2]))):
        a, b = pre.get(key), post.get(key)
        if a is None or b is None or a.flagged or b.flagged or not a.dimension > 0:
            continue
        keys.append(key)
        ratios.append(b.dimension / a.dimension)
    skipped = len(set(pre) | set(post)) - len(keys)
    if skipped:
        warnings.warn(f"{skipped} (layer, class, method) entries had no usable partner", stacklevel=2)
    r = np.array(ratios)
    mean = float(r.mean()) if len(r) else float("nan")
    std = float(r.std(ddof=1)) if len(r) > 1 else 0.0
    return RatioSummary(r, keys, mean, std, skipped)
