"""Low-resource sampling strategies: uniform, hard-margin, and biased.

All three return a :class:`~hardbench.dataset.SubsetSelection` over a parent
dataset. Hard-margin selection ranks by teacher margin ``m_mu = y_mu (T . x_mu)``
and keeps the smallest (or a margin band). Biased selection builds a probe
vector at a fixed angle to the teacher and samples uniformly among the points
both classifiers agree on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset, SubsetSelection, sign_label
from .perceptron import Perceptron, rotate_from
from .rng import make_rng


@dataclass(frozen=True)
class SamplingSpec:
    """Declarative description of one subset draw."""

    strategy: str  # random | hard_margin | biased
    P: int
    theta: float = 0.0  # bias angle in radians; only meaningful for "biased"
    seed: int = 0
    margin_band: tuple[float, float] | None = None  # (m_lo, width) for hard_margin
    balanced: bool = False

    def __post_init__(self):
        if self.strategy not in ("random", "hard_margin", "biased"):
            raise ValueError(f"unknown sampling strategy {self.strategy!r}")
        if self.P < 1:
            raise ValueError(f"need P >= 1, got {self.P}")
        if self.strategy == "biased" and not 0.0 <= self.theta <= math.pi / 2:
            raise ValueError(f"theta must be in [0, pi/2], got {self.theta}")


def draw(ds: LabeledDataset, teacher: Perceptron | None, spec: SamplingSpec) -> SubsetSelection:
    """Dispatch a SamplingSpec to the matching sampler."""
    if spec.strategy == "random":
        return sample_random(ds, spec.P, spec.seed)
    if teacher is None:
        raise ValueError(f"{spec.strategy} sampling needs a teacher")
    if spec.strategy == "hard_margin":
        return sample_hard_margin(ds, teacher, spec.P, band=spec.margin_band, balanced=spec.balanced)
    return sample_biased(ds, teacher, spec.theta, spec.P, spec.seed, balanced=spec.balanced)


def teacher_margins(ds: LabeledDataset, teacher: Perceptron) -> np.ndarray:
    """Per-sample teacher margin y_mu (T . x_mu); non-negative on teacher-labeled data."""
    if teacher.d != ds.d:
        raise ValueError(f"teacher dimension {teacher.d} != dataset d={ds.d}")
    return (ds.features @ teacher.weights) * ds.labels


def sample_random(ds: LabeledDataset, P: int, seed: int) -> SubsetSelection:
    """P distinct indices uniformly without replacement."""
    if P > ds.n:
        raise ValueError(f"cannot sample P={P} from N={ds.n}")
    if P < 1:
        raise ValueError(f"need P >= 1, got {P}")
    rng = make_rng(seed)
    idx = rng.choice(ds.n, size=P, replace=False)
    return SubsetSelection(indices=tuple(int(i) for i in idx), strategy="random", seed=seed)


def _smallest_by_margin(margins: np.ndarray, candidates: np.ndarray, count: int) -> np.ndarray:
    """The ``count`` candidate indices of smallest margin; ties broken by index.

    np.argsort with stable kind on the margin array keeps index order within
    ties, which pins the tie-break contract.
    """
    order = candidates[np.argsort(margins[candidates], kind="stable")]
    return order[:count]


def sample_hard_margin(
    ds: LabeledDataset,
    teacher: Perceptron,
    P: int,
    band: tuple[float, float] | None = None,
    balanced: bool = False,
) -> SubsetSelection:
    """The P samples with smallest teacher margin (optionally within a band).

    ``band=(m_lo, width)`` restricts eligibility to margins in
    [m_lo, m_lo + width] before taking the P smallest, which realizes
    difficulty levels away from the boundary. ``balanced=True`` takes
    P/#classes per label instead (P must divide evenly).
    """
    if P > ds.n:
        raise ValueError(f"cannot select P={P} from N={ds.n}")
    margins = teacher_margins(ds, teacher)
    eligible = np.arange(ds.n)
    if band is not None:
        m_lo, width = band
        if width < 0:
            raise ValueError(f"band width must be >= 0, got {width}")
        eligible = np.flatnonzero((margins >= m_lo) & (margins <= m_lo + width))
    if balanced:
        chosen = _balanced_pick(ds, eligible, P, lambda cand, k: _smallest_by_margin(margins, cand, k))
    else:
        if eligible.size < P:
            raise ValueError(f"only {eligible.size} samples eligible (band {band}), need P={P}")
        chosen = _smallest_by_margin(margins, eligible, P)
    return SubsetSelection(indices=tuple(int(i) for i in chosen), strategy="hard_margin")


def sample_biased(
    ds: LabeledDataset,
    teacher: Perceptron,
    theta: float,
    P: int,
    seed: int,
    balanced: bool = False,
) -> SubsetSelection:
    """Uniform sample among points where a theta-rotated probe agrees with the label.

    The probe is built from an independent substream of ``seed`` so the
    selection stream matches sample_random's contract: at theta=0 the eligible
    set is the whole dataset and the draw is distributionally identical to
    sample_random.
    """
    if not 0.0 <= theta <= math.pi / 2:
        raise ValueError(f"theta must be in [0, pi/2], got {theta}")
    probe = rotate_from(teacher, theta, seed=_probe_seed(seed))
    # same sign convention as label generation, so theta=0 on teacher-labeled
    # data keeps the whole dataset eligible (boundary ties included)
    agree = sign_label(ds.features @ probe.weights) == ds.labels
    eligible = np.flatnonzero(agree)
    rng = make_rng(seed, stream=(1,))
    if balanced:
        def pick(cand: np.ndarray, k: int) -> np.ndarray:
            return cand[rng.choice(cand.size, size=k, replace=False)]

        chosen = _balanced_pick(ds, eligible, P, pick)
    else:
        if eligible.size < P:
            raise ValueError(
                f"eligible set has {eligible.size} samples (theta={theta:.3f}), need P={P}"
            )
        chosen = eligible[rng.choice(eligible.size, size=P, replace=False)]
    return SubsetSelection(
        indices=tuple(int(i) for i in chosen), strategy="biased", seed=seed, theta=theta
    )


def _probe_seed(seed: int) -> int:
    # stable derived seed for the probe's substream
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(0,)).generate_state(1)[0])


def _balanced_pick(ds: LabeledDataset, eligible: np.ndarray, P: int, pick) -> np.ndarray:
    classes = sorted(np.unique(ds.labels).tolist())
    if P % len(classes) != 0:
        raise ValueError(f"balanced selection needs P divisible by {len(classes)}, got P={P}")
    k = P // len(classes)
    parts = []
    for lab in classes:
        cand = eligible[ds.labels[eligible] == lab]
        if cand.size < k:
            raise ValueError(f"label {lab} has only {cand.size} eligible samples, need {k}")
        parts.append(pick(cand, k))
    return np.concatenate(parts)
