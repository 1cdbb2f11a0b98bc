"""Point clouds, synthetic manifolds with known dimension, and file loaders.

All randomness goes through :func:`make_rng`, which wraps numpy's PCG64
bit generator. PCG64 output for a given seed is fixed across platforms and
numpy versions (numpy's stream-compatibility policy covers it), so the
generators below are bit-reproducible.
"""

from __future__ import annotations

import csv
import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataFormatError, UsageError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

SWISS_T_RANGE = (1.5 * np.pi, 4.5 * np.pi)
SWISS_HEIGHT = 21.0


def make_rng(seed) -> np.random.Generator:
    """Seeded PCG64 generator used everywhere in the package."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PointCloud:
    """N samples by D coordinates, optionally labelled with integer classes.

    Arrays are copied and made read-only on construction.
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1 and pts.size == 0:
            pts = pts.reshape(0, 1)
        if pts.ndim != 2:
            raise UsageError(f"points must be a 2-D array, got shape {pts.shape}")
        if pts.shape[1] < 1:
            raise UsageError("point cloud needs at least one coordinate")
        if not np.all(np.isfinite(pts)):
            raise UsageError("point cloud contains NaN or Inf")
        object.__setattr__(self, "points", _frozen(pts))
        if self.labels is not None:
            lab = np.asarray(self.labels)
            if lab.ndim != 1 or lab.shape[0] != pts.shape[0]:
                raise UsageError(
                    f"labels length {lab.shape} does not match {pts.shape[0]} points"
                )
            if lab.size:
                integral = np.issubdtype(lab.dtype, np.integer) or (
                    np.issubdtype(lab.dtype, np.floating) and np.all(lab == np.round(lab))
                )
                if not integral or lab.min() < 0:
                    raise UsageError("labels must be non-negative integers")
            object.__setattr__(self, "labels", _frozen(lab.astype(np.int64)))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx)
        labels = None if self.labels is None else self.labels[idx]
        return PointCloud(self.points[idx], labels)

    def with_points(self, points) -> "PointCloud":
        """Same labels, new coordinates (e.g. layer activations)."""
        return PointCloud(points, self.labels)

    def to_json(self) -> str:
        return json.dumps([[float(v) for v in row] for row in self.points])


@dataclass(frozen=True)
class LabeledDataset:
    """Inputs plus one-hot targets; ``classes[j]`` is the label of column j."""

    inputs: PointCloud
    targets: np.ndarray
    classes: np.ndarray = field(default=None)

    def __post_init__(self):
        t = np.asarray(self.targets, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != self.inputs.n or t.shape[1] < 1:
            raise UsageError(f"targets shape {t.shape} incompatible with {self.inputs.n} inputs")
        if t.size and not (np.all((t == 0) | (t == 1)) and np.all(t.sum(axis=1) == 1)):
            raise UsageError("targets must be one-hot rows")
        object.__setattr__(self, "targets", _frozen(t))
        classes = np.arange(t.shape[1]) if self.classes is None else np.asarray(self.classes)
        object.__setattr__(self, "classes", _frozen(classes.astype(np.int64)))

    @classmethod
    def from_cloud(cls, cloud: PointCloud) -> "LabeledDataset":
        if cloud.labels is None:
            raise UsageError("one-hot targets need a labelled cloud")
        classes, inverse = np.unique(cloud.labels, return_inverse=True)
        targets = np.zeros((cloud.n, len(classes)))
        targets[np.arange(cloud.n), inverse] = 1.0
        return cls(cloud, targets, classes)

    @property
    def n_classes(self) -> int:
        return self.targets.shape[1]


# --------------------------------------------------------------------------
# generators


def generate_hypercube(n: int, dim: int, seed=0) -> PointCloud:
    """``n`` points i.i.d. uniform in the unit ``dim``-cube."""
    if n < 0 or dim < 1:
        raise UsageError("need n >= 0 and dim >= 1")
    return PointCloud(make_rng(seed).random((n, dim)))


def sample_sphere(n: int, sphere_dim: int, rng) -> np.ndarray:
    g = make_rng(rng).standard_normal((n, sphere_dim + 1))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def generate_hypersphere(n: int, sphere_dim: int, seed=0) -> PointCloud:
    """Uniform sample of the unit sphere S^sphere_dim in sphere_dim+1 coordinates."""
    if n < 0 or sphere_dim < 1:
        raise UsageError("need n >= 0 and sphere_dim >= 1")
    return PointCloud(sample_sphere(n, sphere_dim, seed))


def swiss_roll_normal(t: np.ndarray) -> np.ndarray:
    """Unit normal of the roll sheet (t cos t, t sin t, u) at parameter t.

    The normal lies in the x-y plane; the u direction is a tangent.
    """
    tx = np.cos(t) - t * np.sin(t)
    ty = np.sin(t) + t * np.cos(t)
    norm = np.hypot(tx, ty)
    return np.stack([ty / norm, -tx / norm, np.zeros_like(t)], axis=1)


def generate_swiss_roll(n: int, thickness: float = 0.0, seed=0, return_params: bool = False):
    """Swiss roll sheet, optionally thickened along its normal.

    Points are ``(t cos t, t sin t, u)`` with ``t ~ U[1.5 pi, 4.5 pi]`` and
    ``u ~ U[0, 21]``, shifted by ``U[-thickness/2, thickness/2]`` along the
    sheet normal. With ``return_params`` the generating ``(t, u, offset)``
    arrays are returned as well.
    """
    if n < 0 or thickness < 0:
        raise UsageError("need n >= 0 and thickness >= 0")
    rng = make_rng(seed)
    t = rng.uniform(*SWISS_T_RANGE, size=n)
    u = rng.uniform(0.0, SWISS_HEIGHT, size=n)
    offset = rng.uniform(-thickness / 2, thickness / 2, size=n)
    pts = np.stack([t * np.cos(t), t * np.sin(t), u], axis=1)
    if thickness > 0:
        pts = pts + offset[:, None] * swiss_roll_normal(t)
    else:
        offset = np.zeros(n)
    cloud = PointCloud(pts.reshape(n, 3))
    if return_params:
        return cloud, (t, u, offset)
    return cloud


def generate_class_manifolds(
    n_per_class: int,
    n_classes: int = 10,
    latent_dim: int = 4,
    ambient_dim: int = 64,
    noise: float = 0.05,
    seed=0,
) -> PointCloud:
    """Labelled surrogate for an image dataset: one curved manifold per class.

    Each class draws ``latent_dim`` uniform latent coordinates and maps them
    into ``ambient_dim`` coordinates through random Fourier features (a
    smooth, curved embedding), centred on a class-specific offset. Isotropic
    Gaussian noise of standard deviation ``noise`` is added in every ambient
    direction; these are the task-irrelevant directions a trained network
    can discard. Rows are ordered class by class.
    """
    if n_per_class < 0 or n_classes < 1 or latent_dim < 1 or ambient_dim < 1:
        raise UsageError("invalid class-manifold parameters")
    rng = make_rng(seed)
    n_feat = ambient_dim
    chunks, labels = [], []
    for c in range(n_classes):
        freq = rng.standard_normal((latent_dim, n_feat)) * 1.5
        phase = rng.uniform(0, 2 * np.pi, n_feat)
        mix = rng.standard_normal((n_feat, ambient_dim)) / np.sqrt(n_feat)
        centre = rng.standard_normal(ambient_dim) * 0.5
        z = rng.uniform(-1.0, 1.0, (n_per_class, latent_dim))
        x = np.cos(z @ freq + phase) @ mix + centre
        x += noise * rng.standard_normal(x.shape)
        chunks.append(x)
        labels.append(np.full(n_per_class, c))
    pts = np.concatenate(chunks) if chunks else np.zeros((0, ambient_dim))
    return PointCloud(pts, np.concatenate(labels))


# --------------------------------------------------------------------------
# file formats


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, expected_magic: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise DataFormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataFormatError(
            f"{path}: bad IDX magic 0x{magic:08x} (expected 0x{expected_magic:08x})"
        )
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    expected = int(np.prod(dims, dtype=np.int64))
    payload = len(raw) - header
    if payload != expected:
        raise DataFormatError(
            f"{path}: IDX payload length mismatch: header implies {expected} bytes, found {payload}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx_images(path) -> PointCloud:
    """Load an IDX unsigned-byte image tensor as a cloud scaled to [0, 1].

    Each image is flattened row-major, so D = rows * cols. Gzipped files
    are accepted transparently.
    """
    arr = _parse_idx(_read_bytes(path), IDX_IMAGE_MAGIC, path)
    return PointCloud(arr.reshape(arr.shape[0], -1).astype(np.float64) / 255.0)


def load_idx_labels(path) -> np.ndarray:
    arr = _parse_idx(_read_bytes(path), IDX_LABEL_MAGIC, path)
    return arr.astype(np.int64)


def write_idx(path, array) -> None:
    """Write a uint8 array as an IDX file (magic encodes ndim)."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | arr.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(">" + "I" * arr.ndim, *arr.shape))
        f.write(arr.tobytes())


def load_idx_dataset(images_path, labels_path) -> PointCloud:
    cloud = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if labels.shape[0] != cloud.n:
        raise DataFormatError(
            f"{labels_path}: {labels.shape[0]} labels for {cloud.n} images"
        )
    return PointCloud(cloud.points, labels)


def load_csv(path, label_column: bool = False) -> PointCloud:
    """Read comma-separated numeric rows.

    With ``label_column`` the last column is taken as an integer class label.
    Rows are 1-based in error messages; blank lines are skipped.
    """
    rows, labels = [], []
    width = None
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataFormatError(
                    f"{path}: ragged row {lineno}: {len(row)} columns, expected {width}"
                )
            values = []
            for col, cell in enumerate(row, start=1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataFormatError(
                        f"{path}: non-numeric cell {cell!r} at row {lineno}, column {col}"
                    ) from None
            if label_column:
                lab = values.pop()
                if lab != int(lab) or lab < 0:
                    raise DataFormatError(
                        f"{path}: label {lab!r} at row {lineno} is not a non-negative integer"
                    )
                labels.append(int(lab))
            rows.append(values)
    if label_column and width is not None and width < 2:
        raise DataFormatError(f"{path}: label column requested but rows have one column")
    dim = (width - 1 if label_column else width) if width else 1
    pts = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return PointCloud(pts, np.array(labels, dtype=np.int64) if label_column else None)


def save_csv(path, cloud: PointCloud) -> None:
    """Write a cloud as CSV at round-trip precision; labels go last."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for i, row in enumerate(cloud.points):
            cells = [repr(float(v)) for v in row]
            if cloud.labels is not None:
                cells.append(str(int(cloud.labels[i])))
            w.writerow(cells)


def split_by_class(cloud: PointCloud, return_indices: bool = False):
    """One sub-cloud per distinct label, in ascending label order.

    With ``return_indices`` a list of ``(label, original_indices, subcloud)``
    triples is returned instead.
    """
    if cloud.labels is None:
        raise UsageError("split_by_class needs a labelled cloud")
    out = []
    for lab in np.unique(cloud.labels):
        idx = np.flatnonzero(cloud.labels == lab)
        sub = cloud.subset(idx)
        out.append((int(lab), idx, sub) if return_indices else sub)
    return out


def stack_clouds(clouds: Sequence[PointCloud]) -> PointCloud:
    pts = np.concatenate([c.points for c in clouds])
    if all(c.labels is not None for c in clouds):
        return PointCloud(pts, np.concatenate([c.labels for c in clouds]))
    return PointCloud(pts)
