"""Labeled datasets: teacher-labeled Gaussians, CSV ingestion, subset views.

A :class:`LabeledDataset` is an immutable (features, labels) pair with labels
in {-1, +1}. Datasets are generated from a teacher perceptron, ingested from
flat CSV files, or derived from another dataset through a
:class:`SubsetSelection`.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import make_rng

#: strategy tags a SubsetSelection may carry
STRATEGIES = ("random", "hard_margin", "biased", "loss_topk", "gradnorm_topk", "ntk_topk")


def sign_label(values: np.ndarray) -> np.ndarray:
    """Map real values to ±1 labels; zero resolves to +1 (deterministic tie rule)."""
    return np.where(np.asarray(values) >= 0.0, 1, -1).astype(np.int64)


@dataclass(frozen=True)
class LabeledDataset:
    """An immutable N×d feature matrix with ±1 labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labs = np.ascontiguousarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {feats.shape}")
        if feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ValueError(f"need N >= 1 and d >= 1, got shape {feats.shape}")
        if not np.isfinite(feats).all():
            raise ValueError("features contain non-finite entries")
        if labs.shape != (feats.shape[0],):
            raise ValueError(f"labels shape {labs.shape} does not match N={feats.shape[0]}")
        if not np.isin(labs, (-1, 1)).all():
            bad = np.unique(labs[~np.isin(labs, (-1, 1))])
            raise ValueError(f"labels must be -1 or +1, found {bad.tolist()}")
        feats.setflags(write=False)
        labs.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def class_indices(self) -> dict[int, np.ndarray]:
        """Indices of each label value, in ascending row order."""
        return {lab: np.flatnonzero(self.labels == lab) for lab in (-1, 1)}


@dataclass(frozen=True)
class SubsetSelection:
    """An ordered index set into a parent dataset plus provenance."""

    indices: tuple[int, ...]
    strategy: str
    P: int = field(default=-1)
    seed: int | None = None
    theta: float | None = None

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise ValueError("selection indices must be unique")
        if any(i < 0 for i in idx):
            raise ValueError("selection indices must be non-negative")
        object.__setattr__(self, "indices", idx)
        if self.P == -1:
            object.__setattr__(self, "P", len(idx))
        elif self.P != len(idx):
            raise ValueError(f"P={self.P} does not match {len(idx)} indices")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}, expected one of {STRATEGIES}")

    def to_json(self) -> str:
        return json.dumps(
            {
                "strategy": self.strategy,
                "P": self.P,
                "seed": self.seed,
                "theta": self.theta,
                "indices": list(self.indices),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "SubsetSelection":
        obj = json.loads(text)
        return cls(
            indices=tuple(obj["indices"]),
            strategy=obj["strategy"],
            P=obj["P"],
            seed=obj.get("seed"),
            theta=obj.get("theta"),
        )


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def generate_teacher_dataset(d: int, n: int, teacher, seed: int) -> LabeledDataset:
    """Draw n i.i.d. standard-Gaussian rows in d dims, labeled by the teacher's sign.

    Deterministic given (d, n, teacher, seed).
    """
    if teacher.d != d:
        raise ValueError(f"teacher dimension {teacher.d} != requested d={d}")
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    rng = make_rng(seed)
    feats = rng.standard_normal((n, d))
    labels = sign_label(feats @ teacher.weights)
    return LabeledDataset(feats, labels)


def generate_blobs_with_outliers(
    d: int,
    n_per_class: int,
    outlier_fraction: float = 0.1,
    separation: float = 4.0,
    outlier_scale: float = 2.0,
    seed: int = 0,
) -> LabeledDataset:
    """Two Gaussian blobs (±1) with a fraction of far-side outliers in each class.

    Class c is centered at c*(separation/2)*e1 with unit isotropic noise. An
    ``outlier_fraction`` of each class is instead placed deep inside the
    opposite class's region (at -c*outlier_scale*(separation/2)*e1) while
    keeping label c, so any reasonable decision boundary misclassifies the
    outliers. Row order: class -1 block then class +1 block; within each block
    the clean rows precede the outlier rows.
    """
    if not 0.0 <= outlier_fraction < 1.0:
        raise ValueError(f"outlier_fraction must be in [0, 1), got {outlier_fraction}")
    if n_per_class < 1:
        raise ValueError("need n_per_class >= 1")
    rng = make_rng(seed)
    n_out = int(round(outlier_fraction * n_per_class))
    half = separation / 2.0
    blocks, labels = [], []
    for c in (-1, 1):
        n_clean = n_per_class - n_out
        clean = rng.standard_normal((n_clean, d))
        clean[:, 0] += c * half
        outl = rng.standard_normal((n_out, d))
        outl[:, 0] += -c * outlier_scale * half
        blocks += [clean, outl]
        labels += [c] * n_per_class
    return LabeledDataset(np.vstack(blocks), np.asarray(labels))


# ---------------------------------------------------------------------------
# CSV ingestion / export
# ---------------------------------------------------------------------------

class CsvFormatError(ValueError):
    """Raised when a CSV file violates the expected dataset layout."""


def ingest_csv(path: str | Path, label_column: str, standardize: bool = False) -> LabeledDataset:
    """Read a header+rows CSV into a LabeledDataset, preserving row order.

    The label column may hold any two distinct values; they are mapped to
    {-1, +1} by lexicographic order of their string form (so ``a``→-1, ``b``→+1,
    and ``-1``/``1`` or ``0``/``1`` map the natural way). All other columns must
    be numeric. With ``standardize=True`` each feature column is shifted to
    zero mean and scaled to unit variance (columns with zero variance are left
    centered only).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        if label_column not in header:
            raise CsvFormatError(f"{path}: no column named {label_column!r} in header {header}")
        label_pos = header.index(label_column)
        feat_names = [h for i, h in enumerate(header) if i != label_pos]
        rows, raw_labels = [], []
        for row_num, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvFormatError(f"{path}: row {row_num} has {len(row)} cells, expected {len(header)}")
            vals = []
            for col_pos, cell in enumerate(row):
                if col_pos == label_pos:
                    raw_labels.append(cell)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise CsvFormatError(
                        f"{path}: non-numeric cell {cell!r} at row {row_num}, column {header[col_pos]!r}"
                    ) from None
            rows.append(vals)
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    distinct = sorted(set(raw_labels))
    if len(distinct) != 2:
        raise CsvFormatError(
            f"{path}: label column {label_column!r} must hold exactly two distinct values, found {distinct}"
        )
    mapping = {distinct[0]: -1, distinct[1]: 1}
    feats = np.asarray(rows, dtype=np.float64)
    if standardize:
        feats = feats - feats.mean(axis=0)
        sd = feats.std(axis=0)
        sd[sd == 0.0] = 1.0
        feats = feats / sd
    labels = np.asarray([mapping[v] for v in raw_labels], dtype=np.int64)
    ds = LabeledDataset(feats, labels)
    # remember column names for round-trips
    object.__setattr__(ds, "_feature_names", feat_names)
    return ds


def export_csv(ds: LabeledDataset, path: str | Path, label_column: str = "label") -> None:
    """Write a dataset as UTF-8 CSV: header row, float features, one label column.

    Floats are written with shortest round-trip repr, so export→ingest is
    bitwise lossless.
    """
    names = getattr(ds, "_feature_names", None) or [f"x{i}" for i in range(ds.d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(names) + [label_column])
        for row, lab in zip(ds.features, ds.labels):
            writer.writerow([repr(float(v)) for v in row] + [str(int(lab))])


# ---------------------------------------------------------------------------
# Subsetting
# ---------------------------------------------------------------------------

def take_subset(ds: LabeledDataset, sel: SubsetSelection | Sequence[int]) -> LabeledDataset:
    """Materialize the rows of ``ds`` at the selection's indices, in selection order."""
    indices = sel.indices if isinstance(sel, SubsetSelection) else tuple(int(i) for i in sel)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("selection is empty")
    if idx.max() >= ds.n or idx.min() < 0:
        raise IndexError(f"selection index out of range for dataset with N={ds.n}")
    return LabeledDataset(ds.features[idx], ds.labels[idx])
