"""Hard-example benchmark construction and evaluation.

The pipeline: train a deliberately undertrained predictor (default one epoch),
score every sample with a difficulty metric, and keep the top-k per label.
Random per-label selections provide the baseline. ``evaluate_bench`` trains
fresh models on a selection and reports test accuracy, and
``bias_gap_diagnostic`` quantifies how far an undertrained predictor drags the
selected subset's student away from the teacher.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import LabeledDataset, SubsetSelection, take_subset
from .nnet import (
    MlpModel,
    accuracy,
    init_mlp,
    mean_loss,
    predict_sign,
    score_dataset,
    train_epochs,
)
from .perceptron import Perceptron, analytic_error, train_max_margin
from .rng import make_rng

METRICS = ("loss", "gradnorm", "ntk_diag")
_STRATEGY_FOR_METRIC = {"loss": "loss_topk", "gradnorm": "gradnorm_topk", "ntk_diag": "ntk_topk"}


@dataclass(frozen=True)
class BenchSpec:
    """How to build one hard benchmark selection."""

    metric: str = "loss"
    k: int = 16  # examples kept per label
    epochs: int = 1  # predictor training epochs (1 = the early-stopped regime)
    predictor_seed: int = 0
    baseline_seeds: tuple[int, ...] = (0, 1, 2)
    d_hidden: int = 64
    lr: float = 0.05
    batch_size: int = 32
    at_init: bool = False  # score at random initialization instead of training
    squash_logits: bool = False

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.k < 1:
            raise ValueError(f"need k >= 1, got {self.k}")
        if self.epochs < 1:
            raise ValueError(f"need epochs >= 1, got {self.epochs}")


def fit_predictor(ds: LabeledDataset, spec: BenchSpec) -> MlpModel:
    """The (deliberately under-)trained scoring model."""
    model = init_mlp(ds.d, spec.d_hidden, 1, "tanh", seed=spec.predictor_seed)
    if spec.at_init:
        return model
    return train_epochs(model, ds, lr=spec.lr, epochs=spec.epochs,
                        batch_size=spec.batch_size, seed=spec.predictor_seed)


def _metric_values(model: MlpModel, ds: LabeledDataset, spec: BenchSpec) -> np.ndarray:
    scores = score_dataset(model, ds, squash_logits=spec.squash_logits)
    key = {"loss": "loss_score", "gradnorm": "gradnorm_score", "ntk_diag": "ntk_diag"}[spec.metric]
    return np.asarray([getattr(s, key) for s in scores])


def _per_label_topk(ds: LabeledDataset, values: np.ndarray, k: int) -> list[int]:
    chosen: list[int] = []
    for label in sorted(np.unique(ds.labels).tolist()):
        members = np.flatnonzero(ds.labels == label)
        if members.size < k:
            raise ValueError(f"label {label} has {members.size} samples, need k={k}")
        # stable sort on negated values: equal scores keep ascending index order
        order = members[np.argsort(-values[members], kind="stable")]
        chosen.extend(int(i) for i in order[:k])
    return chosen


def build_hard_bench(ds: LabeledDataset, spec: BenchSpec) -> SubsetSelection:
    """Top-k hardest examples per label under ``spec``'s metric and predictor."""
    predictor = fit_predictor(ds, spec)
    values = _metric_values(predictor, ds, spec)
    chosen = _per_label_topk(ds, values, spec.k)
    return SubsetSelection(
        indices=tuple(chosen),
        strategy=_STRATEGY_FOR_METRIC[spec.metric],
        seed=spec.predictor_seed,
    )


def build_random_bench(ds: LabeledDataset, k: int, seeds) -> list[SubsetSelection]:
    """One per-label-balanced uniform selection per seed."""
    selections = []
    labels = sorted(np.unique(ds.labels).tolist())
    for seed in seeds:
        rng = make_rng(int(seed))
        chosen: list[int] = []
        for label in labels:
            members = np.flatnonzero(ds.labels == label)
            if members.size < k:
                raise ValueError(f"label {label} has {members.size} samples, need k={k}")
            pick = members[rng.choice(members.size, size=k, replace=False)]
            chosen.extend(int(i) for i in pick)
        selections.append(SubsetSelection(indices=tuple(chosen), strategy="random", seed=int(seed)))
    return selections


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvalConfig:
    d_hidden: int = 64
    lr: float = 0.05
    epochs: int = 200
    batch_size: int = 16
    seeds: tuple[int, ...] = (101, 102, 103)


@dataclass(frozen=True)
class EvalMetrics:
    test_accuracy: float
    test_loss: float
    per_seed: tuple[tuple[int, float, float], ...]  # (seed, accuracy, loss)


def evaluate_bench(train_ds: LabeledDataset, test_ds: LabeledDataset, cfg: EvalConfig = EvalConfig()) -> EvalMetrics:
    """Train fresh models on the subset and average test metrics over seeds.

    Caller guarantees train/test row provenance is disjoint; the models here
    are re-initialized from the eval seeds, never reusing predictor weights.
    """
    rows = []
    for seed in cfg.seeds:
        model = init_mlp(train_ds.d, cfg.d_hidden, 1, "tanh", seed=int(seed))
        model = train_epochs(model, train_ds, lr=cfg.lr, epochs=cfg.epochs,
                             batch_size=cfg.batch_size, seed=int(seed))
        rows.append((int(seed), accuracy(model, test_ds), mean_loss(model, test_ds)))
    accs = [a for _, a, _ in rows]
    losses = [l for _, _, l in rows]
    return EvalMetrics(
        test_accuracy=float(np.mean(accs)),
        test_loss=float(np.mean(losses)),
        per_seed=tuple(rows),
    )


@dataclass(frozen=True)
class BenchResult:
    """One benchmark construction plus its evaluation and baselines."""

    selection: SubsetSelection
    metrics: EvalMetrics
    baseline_selections: tuple[SubsetSelection, ...]
    baseline_metrics: tuple[EvalMetrics, ...]
    spec: BenchSpec

    @property
    def baseline_mean_accuracy(self) -> float:
        return float(np.mean([m.test_accuracy for m in self.baseline_metrics]))


def run_bench(ds_train: LabeledDataset, ds_test: LabeledDataset, spec: BenchSpec,
              eval_cfg: EvalConfig = EvalConfig()) -> BenchResult:
    """Hard selection + random baselines, all evaluated on the same test set."""
    selection = build_hard_bench(ds_train, spec)
    metrics = evaluate_bench(take_subset(ds_train, selection), ds_test, eval_cfg)
    baselines = build_random_bench(ds_train, spec.k, spec.baseline_seeds)
    baseline_metrics = tuple(
        evaluate_bench(take_subset(ds_train, sel), ds_test, eval_cfg) for sel in baselines
    )
    return BenchResult(selection, metrics, tuple(baselines), baseline_metrics, spec)


# ---------------------------------------------------------------------------
# Early-stopping bias diagnostic
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BiasGapReport:
    """Angles (radians) quantifying selection bias from an undertrained predictor."""

    gamma: float  # angle between the linear probe and the teacher
    subset_angle: float  # angle between the subset-trained student and the teacher
    ratio: float  # subset_angle / gamma (nan when gamma ~ 0)
    predicted_bias: float  # the gamma/2 heuristic, reported not asserted
    degenerate: bool  # probe indistinguishable from teacher; no bias expected
    subset_error: float  # arccos overlap / pi of the subset student


def bias_gap_diagnostic(
    teacher: Perceptron,
    predictor: Perceptron | MlpModel,
    selection: SubsetSelection,
    ds: LabeledDataset,
    probe_tol: float = 1e-4,
) -> BiasGapReport:
    """Angle bookkeeping for the bias-through-early-stopping story.

    A linear probe stands in for the predictor: MLP predictors are projected
    to the max-margin perceptron fit on their own predicted labels over the
    dataset. gamma is the probe-teacher angle; the report compares it to the
    angle reached by a max-margin student trained on the selected subset.
    """
    if isinstance(predictor, Perceptron):
        probe = predictor
    else:
        pseudo = LabeledDataset(ds.features, predict_sign(predictor, ds.features))
        probe_report = train_max_margin(pseudo, tol=probe_tol)
        probe = probe_report.student
    gamma = analytic_error(probe, teacher) * math.pi
    subset = take_subset(ds, selection)
    student = train_max_margin(subset, tol=probe_tol).student
    subset_angle = analytic_error(student, teacher) * math.pi
    degenerate = gamma < 1e-6
    ratio = math.nan if degenerate else subset_angle / gamma
    return BiasGapReport(
        gamma=gamma,
        subset_angle=subset_angle,
        ratio=ratio,
        predicted_bias=gamma / 2.0,
        degenerate=degenerate,
        subset_error=subset_angle / math.pi,
    )
