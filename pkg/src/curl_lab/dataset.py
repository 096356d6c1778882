"""Finite labeled point sets and their on-disk formats.

CSV: header ``x_0,...,x_{d-1},label``, one row per point.

Binary: 16-byte header (8-byte magic ``CURLDATA``, little-endian u32 n,
u32 d), then n*d float64 points in row-major order, then n int64 labels.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core_math import ClassPrior, DomainError

MAGIC = b"CURLDATA"
_HEADER = struct.Struct("<8sII")


@dataclass(frozen=True)
class LabeledDataset:
    points: np.ndarray
    labels: np.ndarray
    n_classes: int
    buckets: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        lab = np.asarray(self.labels)
        if lab.ndim != 1 or len(lab) != len(pts):
            raise DomainError("labels must be a vector with one entry per point")
        if lab.size and not np.issubdtype(lab.dtype, np.integer):
            if not np.all(lab == np.round(lab)):
                raise DomainError("labels must be integers")
        lab = lab.astype(np.int64)
        C = int(self.n_classes)
        if C < 1:
            raise DomainError("need at least one class")
        if lab.size and (lab.min() < 0 or lab.max() >= C):
            raise DomainError(f"labels must lie in [0, {C})")
        buckets = tuple(np.flatnonzero(lab == c) for c in range(C))
        empty = [c for c, b in enumerate(buckets) if b.size == 0]
        if empty:
            raise DomainError(f"classes without points: {empty}")
        pts.setflags(write=False)
        lab.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "n_classes", C)
        object.__setattr__(self, "buckets", buckets)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def class_counts(self) -> np.ndarray:
        return np.array([b.size for b in self.buckets])

    def point_weights(self, prior: ClassPrior) -> np.ndarray:
        """Marginal probability of each point under prior x empirical class-conditionals."""
        pi = _check_prior(self, prior)
        return pi[self.labels] / self.class_counts[self.labels]

    def subset(self, index) -> "LabeledDataset":
        idx = np.asarray(index)
        return LabeledDataset(self.points[idx], self.labels[idx], self.n_classes)


def _check_prior(data: LabeledDataset, prior: ClassPrior) -> np.ndarray:
    if len(prior) != data.n_classes:
        raise DomainError(f"prior has {len(prior)} classes, dataset has {data.n_classes}")
    return prior.as_array()


def coarse_grain(data: LabeledDataset, mapping) -> LabeledDataset:
    """Relabel latent classes through a surjection [C] -> [C'].

    Points of merged classes are pooled with equal weight, so the coarse
    class-conditional is the count-weighted mixture of the originals.
    """
    mapping = np.asarray(mapping, dtype=np.int64)
    if mapping.shape != (data.n_classes,):
        raise DomainError("mapping must assign every latent class")
    if mapping.min() < 0:
        raise DomainError("mapping targets must be non-negative")
    n_coarse = int(mapping.max()) + 1
    if set(mapping.tolist()) != set(range(n_coarse)):
        raise DomainError("mapping must be surjective onto [C']")
    return LabeledDataset(data.points, mapping[data.labels], n_coarse)


def coarse_prior(prior: ClassPrior, mapping) -> ClassPrior:
    mapping = np.asarray(mapping, dtype=np.int64)
    out = np.zeros(int(mapping.max()) + 1)
    np.add.at(out, mapping, prior.as_array())
    return ClassPrior(out / out.sum())


def restrict_classes(data: LabeledDataset, classes) -> tuple[LabeledDataset, np.ndarray]:
    """Keep only the listed classes, relabelled 0..|Y|-1; returns the row index kept too."""
    classes = [int(c) for c in classes]
    if len(set(classes)) != len(classes) or not classes:
        raise DomainError("class subset must be non-empty and duplicate-free")
    remap = -np.ones(data.n_classes, dtype=np.int64)
    remap[classes] = np.arange(len(classes))
    keep = np.flatnonzero(remap[data.labels] >= 0)
    return LabeledDataset(data.points[keep], remap[data.labels[keep]], len(classes)), keep


def restrict_prior(prior: ClassPrior, classes) -> ClassPrior:
    sub = prior.as_array()[list(classes)]
    if sub.sum() <= 0:
        raise DomainError("restricted prior has no mass")
    return ClassPrior(sub / sub.sum())


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(data: LabeledDataset, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x_{j}" for j in range(data.dim)] + ["label"])
        for row, lab in zip(data.points, data.labels):
            w.writerow([_fmt(v) for v in row] + [int(lab)])


def read_csv(path, n_classes: int | None = None) -> LabeledDataset:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if not header or header[-1] != "label":
            raise DomainError(f"{path}: last column must be 'label'")
        expected = [f"x_{j}" for j in range(len(header) - 1)]
        if header[:-1] != expected:
            raise DomainError(f"{path}: feature columns must be named x_0..x_(d-1)")
        rows = [row for row in r if row]
    pts = np.array([[float(v) for v in row[:-1]] for row in rows], dtype=float)
    if not rows:
        raise DomainError(f"{path}: no data rows")
    labels = np.array([int(row[-1]) for row in rows], dtype=np.int64)
    C = int(labels.max()) + 1 if n_classes is None else int(n_classes)
    return LabeledDataset(pts.reshape(len(rows), len(header) - 1), labels, C)


def write_binary(data: LabeledDataset, path) -> None:
    n, d = data.points.shape
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, n, d))
        fh.write(data.points.astype("<f8").tobytes(order="C"))
        fh.write(data.labels.astype("<i8").tobytes())


def read_binary(path, n_classes: int | None = None) -> LabeledDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DomainError(f"{path}: truncated header")
    magic, n, d = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise DomainError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size :]
    if len(body) != 8 * n * d + 8 * n:
        raise DomainError(f"{path}: payload size does not match n={n}, d={d}")
    pts = np.frombuffer(body, dtype="<f8", count=n * d).reshape(n, d).astype(float)
    labels = np.frombuffer(body, dtype="<i8", offset=8 * n * d, count=n).astype(np.int64)
    C = int(labels.max()) + 1 if n_classes is None else int(n_classes)
    return LabeledDataset(pts, labels, C)


def load(path, n_classes: int | None = None) -> LabeledDataset:
    """Read either format, sniffing the binary magic."""
    with Path(path).open("rb") as fh:
        head = fh.read(len(MAGIC))
    if head == MAGIC:
        return read_binary(path, n_classes)
    return read_csv(path, n_classes)
