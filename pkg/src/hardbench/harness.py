"""Experiment orchestration: simulation sweeps, reports, and file emission.

Each experiment consumes an :class:`ExperimentConfig` and produces an
:class:`ExperimentResult` (config snapshot + flat rows) that serializes to
deterministic CSV/JSON. Timing and timestamps go only into the run manifest so
data outputs are byte-identical across reruns.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bench import BenchSpec, run_bench
from .dataset import generate_blobs_with_outliers, generate_teacher_dataset, take_subset
from .mmd import mmd_ordering_experiment
from .perceptron import analytic_error, random_perceptron, train_max_margin
from .rng import RNG_ALGORITHM, derive_seed
from .sampler import SamplingSpec, draw
from .theory import theory_curve

EXPERIMENTS = (
    "sim_random",
    "sim_hard",
    "sim_biased",
    "theory_curve",
    "mmd_ordering",
    "bench_e2e",
    "score_dataset",
)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "sim_random"
    d: int = 200
    alphas: tuple[float, ...] = (1.0, 1.5, 2.0, 3.0, 4.0, 5.0)
    thetas_deg: tuple[float, ...] = (20.0, 40.0, 60.0)
    seeds: tuple[int, ...] = tuple(range(20))
    pool_factor: int = 50  # simulation pool size N = pool_factor * d
    margin_band: tuple[float, float] | None = None  # hard sampling band (m_lo, width)
    train_tol: float = 1e-4
    out_dir: str = "out"
    # theory
    keep_fraction: float = 1.0
    # mmd
    mmd_n: int = 5000
    mmd_p: int = 50
    mmd_trials: int = 20
    mmd_d: int = 20
    mmd_seed: int = 0
    # bench
    bench_metrics: tuple[str, ...] = ("loss", "gradnorm")
    bench_k: int = 16
    bench_epochs: int = 1
    bench_d: int = 10
    bench_n_per_class: int = 500
    bench_outlier_fraction: float = 0.1
    bench_separation: float = 4.0
    bench_predictor_seeds: tuple[int, ...] = tuple(range(10))
    # score / select inputs
    input_csv: str | None = None
    label_column: str = "label"
    score_metric: str = "loss"
    score_k: int = 16

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}, expected one of {EXPERIMENTS}")
        alphas = tuple(float(a) for a in self.alphas)
        if any(a <= 0 for a in alphas):
            raise ValueError("alphas must be positive")
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise ValueError("alphas must be strictly increasing")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "thetas_deg", tuple(float(t) for t in self.thetas_deg))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "bench_metrics", tuple(self.bench_metrics))
        object.__setattr__(self, "bench_predictor_seeds", tuple(int(s) for s in self.bench_predictor_seeds))
        if self.margin_band is not None:
            object.__setattr__(self, "margin_band", (float(self.margin_band[0]), float(self.margin_band[1])))

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(raw)
        for key in ("alphas", "thetas_deg", "seeds", "bench_metrics", "bench_predictor_seeds"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        if kwargs.get("margin_band") is not None:
            kwargs["margin_band"] = tuple(kwargs["margin_band"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class ExperimentResult:
    config: dict
    rows: list[dict]
    failures: list[dict]
    wall_clock: float
    version: str = __version__
    rng_algorithm: str = RNG_ALGORITHM


# ---------------------------------------------------------------------------
# Simulation sweeps
# ---------------------------------------------------------------------------

def _settings_for(config: ExperimentConfig) -> list[tuple[str, float | None]]:
    """(setting name, theta radians or None) pairs; biased runs keep a random baseline."""
    if config.experiment == "sim_random":
        return [("random", None)]
    if config.experiment == "sim_hard":
        return [("random", None), ("hard", None)]
    if config.experiment == "sim_biased":
        return [("random", None)] + [
            (f"biased_{t:g}", math.radians(t)) for t in config.thetas_deg
        ]
    raise ValueError(f"{config.experiment} is not a simulation experiment")


def run_simulation(config: ExperimentConfig) -> ExperimentResult:
    """Sweep (alpha, seed, setting) cells; failures mark the cell, not the run.

    All settings of one (alpha, seed) cell share the teacher and the data
    pool, so strategy curves are paired sample-by-sample.
    """
    t0 = time.perf_counter()
    settings = _settings_for(config)
    n_pool = config.pool_factor * config.d
    rows: list[dict] = []
    failures: list[dict] = []
    for ai, alpha in enumerate(config.alphas):
        p = int(round(alpha * config.d))
        if p < 1 or p > n_pool:
            failures.append({"alpha": alpha, "error": f"P={p} outside pool size {n_pool}"})
            continue
        for seed in config.seeds:
            teacher = random_perceptron(config.d, seed=derive_seed(seed, 0))
            ds = generate_teacher_dataset(config.d, n_pool, teacher, seed=derive_seed(seed, 1, ai))
            for si, (name, theta) in enumerate(settings):
                try:
                    spec = SamplingSpec(
                        strategy="random" if name == "random" else ("hard_margin" if name == "hard" else "biased"),
                        P=p,
                        theta=theta or 0.0,
                        seed=derive_seed(seed, 2, ai, si),
                        margin_band=config.margin_band if name == "hard" else None,
                    )
                    sel = draw(ds, teacher, spec)
                    report = train_max_margin(take_subset(ds, sel), tol=config.train_tol)
                    rows.append(
                        {
                            "experiment": config.experiment,
                            "setting": name,
                            "alpha": alpha,
                            "theta_deg": math.degrees(theta) if theta is not None else "",
                            "seed": seed,
                            "d": config.d,
                            "n_pool": n_pool,
                            "P": p,
                            "epsilon_g": analytic_error(report.student, teacher),
                            "margin": report.achieved_margin,
                            "converged": report.converged,
                            "iterations": report.iterations,
                        }
                    )
                except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
                    failures.append(
                        {"alpha": alpha, "seed": seed, "setting": name, "error": f"{type(exc).__name__}: {exc}"}
                    )
    return ExperimentResult(
        config=config.to_dict(), rows=rows, failures=failures, wall_clock=time.perf_counter() - t0
    )


SIM_CSV_HEADER = [
    "experiment", "setting", "alpha", "theta_deg", "seed", "d", "n_pool", "P",
    "epsilon_g", "margin", "converged", "iterations",
]


# ---------------------------------------------------------------------------
# Reports over simulation rows
# ---------------------------------------------------------------------------

def _mean_by_alpha(rows: list[dict], setting: str) -> dict[float, float]:
    acc: dict[float, list[float]] = {}
    for row in rows:
        if row["setting"] == setting:
            acc.setdefault(float(row["alpha"]), []).append(float(row["epsilon_g"]))
    return {a: float(np.mean(v)) for a, v in sorted(acc.items())}


def _std_by_alpha(rows: list[dict], setting: str) -> dict[float, float]:
    acc: dict[float, list[float]] = {}
    for row in rows:
        if row["setting"] == setting:
            acc.setdefault(float(row["alpha"]), []).append(float(row["epsilon_g"]))
    return {a: float(np.std(v, ddof=1)) if len(v) > 1 else 0.0 for a, v in sorted(acc.items())}


def run_crossover_report(rows: list[dict], setting_a: str = "hard", setting_b: str = "random") -> dict:
    """Locate the alpha where mean error of setting_a crosses setting_b.

    The gap g(alpha) = mean_eps_a - mean_eps_b is scanned on the shared grid;
    a sign change between consecutive grid points is interpolated linearly.
    """
    mean_a = _mean_by_alpha(rows, setting_a)
    mean_b = _mean_by_alpha(rows, setting_b)
    shared = sorted(set(mean_a) & set(mean_b))
    if len(shared) < 2:
        raise ValueError("need at least two shared alpha grid points")
    gaps = [mean_a[a] - mean_b[a] for a in shared]
    crossover = None
    for (a1, g1), (a2, g2) in zip(zip(shared, gaps), zip(shared[1:], gaps[1:])):
        if g1 * g2 < 0.0:  # strict sign change; identical curves never cross
            crossover = a1 + (a2 - a1) * abs(g1) / (abs(g1) + abs(g2))
            break
    return {
        "setting_a": setting_a,
        "setting_b": setting_b,
        "alphas": shared,
        "gap": gaps,
        "gap_low_alpha_sign": int(np.sign(gaps[0])),
        "gap_high_alpha_sign": int(np.sign(gaps[-1])),
        "crossover_alpha": crossover,
        "message": "no crossover in grid" if crossover is None else f"crossover at alpha={crossover:.4g}",
    }


def run_bias_report(rows: list[dict], small_alpha: float | None = None, large_alpha: float | None = None) -> dict:
    """Delta(alpha, theta) = mean biased error - mean random error, plus ordering checks."""
    random_means = _mean_by_alpha(rows, "random")
    if not random_means:
        raise ValueError("bias report needs a random baseline setting in the rows")
    settings = sorted({row["setting"] for row in rows if str(row["setting"]).startswith("biased_")})
    if not settings:
        raise ValueError("bias report needs at least one biased_<theta> setting")
    alphas = sorted(random_means)
    small = small_alpha if small_alpha is not None else alphas[0]
    large = large_alpha if large_alpha is not None else alphas[-1]
    table = []
    deltas_small: dict[float, float] = {}
    checks = []
    for name in settings:
        theta = float(name.split("_", 1)[1])
        biased_means = _mean_by_alpha(rows, name)
        for alpha in alphas:
            if alpha in biased_means:
                table.append(
                    {"theta_deg": theta, "alpha": alpha, "delta": biased_means[alpha] - random_means[alpha]}
                )
        if small in biased_means and large in biased_means:
            d_small = biased_means[small] - random_means[small]
            d_large = biased_means[large] - random_means[large]
            deltas_small[theta] = d_small
            checks.append(
                {"theta_deg": theta, "delta_small": d_small, "delta_large": d_large,
                 "low_alpha_hurts_more": bool(d_small > d_large)}
            )
    thetas_sorted = sorted(deltas_small)
    increasing = all(
        deltas_small[t1] < deltas_small[t2] for t1, t2 in zip(thetas_sorted, thetas_sorted[1:])
    )
    return {
        "small_alpha": small,
        "large_alpha": large,
        "table": table,
        "per_theta_checks": checks,
        "delta_increasing_in_theta_at_small_alpha": bool(increasing),
        "all_low_alpha_hurt_more": bool(all(c["low_alpha_hurts_more"] for c in checks)),
    }


# ---------------------------------------------------------------------------
# Other experiments
# ---------------------------------------------------------------------------

def run_theory(config: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    curve = theory_curve(config.alphas, keep_fraction=config.keep_fraction)
    rows = [
        {"alpha": a, "epsilon_g": e, "regime": curve.regime, "keep_fraction": config.keep_fraction}
        for a, e in curve.points
    ]
    return ExperimentResult(config.to_dict(), rows, [], time.perf_counter() - t0)


THEORY_CSV_HEADER = ["alpha", "epsilon_g", "regime", "keep_fraction"]


def run_mmd_ordering(config: ExperimentConfig) -> tuple[ExperimentResult, list[dict]]:
    """Per-trial result rows plus the aggregate (mean/std per theta) rows."""
    t0 = time.perf_counter()
    teacher = random_perceptron(config.mmd_d, seed=derive_seed(config.mmd_seed, 0))
    ds = generate_teacher_dataset(
        config.mmd_d, config.mmd_n, teacher, seed=derive_seed(config.mmd_seed, 1)
    )
    thetas = [math.radians(t) for t in (0.0,) + tuple(t for t in config.thetas_deg if t != 0.0)]
    summary, trials = mmd_ordering_experiment(
        ds, teacher, thetas, P=config.mmd_p, trials=config.mmd_trials, base_seed=config.mmd_seed
    )
    rows = [
        {"theta_deg": round(math.degrees(t), 10), "trial": trial, "mmd2": val}
        for t, trial, val in trials
    ]
    aggregate = [
        {"theta_deg": round(math.degrees(s.theta), 10), "mean_mmd2": s.mean_mmd2,
         "std_mmd2": s.std_mmd2, "n_trials": s.trials}
        for s in summary
    ]
    return ExperimentResult(config.to_dict(), rows, [], time.perf_counter() - t0), aggregate


MMD_CSV_HEADER = ["theta_deg", "trial", "mmd2"]
MMD_SUMMARY_CSV_HEADER = ["theta_deg", "mean_mmd2", "std_mmd2", "n_trials"]


def run_bench_e2e(config: ExperimentConfig) -> ExperimentResult:
    t0 = time.perf_counter()
    rows: list[dict] = []
    failures: list[dict] = []
    for pseed in config.bench_predictor_seeds:
        train = generate_blobs_with_outliers(
            config.bench_d, config.bench_n_per_class, config.bench_outlier_fraction,
            config.bench_separation, seed=derive_seed(pseed, 10)
        )
        test = generate_blobs_with_outliers(
            config.bench_d, config.bench_n_per_class, 0.0,
            config.bench_separation, seed=derive_seed(pseed, 11)
        )
        for metric in config.bench_metrics:
            try:
                spec = BenchSpec(
                    metric=metric, k=config.bench_k, epochs=config.bench_epochs,
                    predictor_seed=pseed,
                    baseline_seeds=(derive_seed(pseed, 12, 0), derive_seed(pseed, 12, 1), derive_seed(pseed, 12, 2)),
                )
                result = run_bench(train, test, spec)
                rows.append(
                    {"bench_type": "hard", "metric": metric, "k": config.bench_k, "seed": pseed,
                     "test_accuracy": result.metrics.test_accuracy, "test_loss": result.metrics.test_loss,
                     "selection": list(result.selection.indices)}
                )
                for sel, m in zip(result.baseline_selections, result.baseline_metrics):
                    rows.append(
                        {"bench_type": "random", "metric": metric, "k": config.bench_k, "seed": sel.seed,
                         "test_accuracy": m.test_accuracy, "test_loss": m.test_loss,
                         "selection": list(sel.indices)}
                    )
            except Exception as exc:  # noqa: BLE001
                failures.append({"metric": metric, "seed": pseed, "error": f"{type(exc).__name__}: {exc}"})
    return ExperimentResult(config.to_dict(), rows, failures, time.perf_counter() - t0)


BENCH_CSV_HEADER = ["bench_type", "metric", "k", "seed", "test_accuracy", "test_loss"]


# ---------------------------------------------------------------------------
# File emission
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row.get(col, "")) for col in header])


def write_result(result: ExperimentResult, out_dir: str | Path, stem: str, header: list[str]) -> list[Path]:
    """Emit <stem>.csv + <stem>.json + manifest.json under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    write_csv(csv_path, header, result.rows)
    json_path = out / f"{stem}.json"
    payload = {
        "config": result.config,
        "rows": result.rows,
        "version": result.version,
        "rng_algorithm": result.rng_algorithm,
    }
    json_path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    manifest = {
        "config": result.config,
        "config_hash": hashlib.sha256(json.dumps(result.config, sort_keys=True).encode()).hexdigest(),
        "rng_algorithm": result.rng_algorithm,
        "version": result.version,
        "wall_clock_s": result.wall_clock,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "outputs": [csv_path.name, json_path.name],
        "failures": result.failures,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return [csv_path, json_path, manifest_path]
