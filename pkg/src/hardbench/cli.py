"""Command-line entry point.

Subcommands: simulate | theory | mmd | score | select | bench | report.
Configuration comes from an optional JSON file plus flag overrides (flags win;
later flags win over earlier ones). The output directory resolves as:
``--out`` flag > HARDBENCH_OUT env var > config file value > ``./out``.
Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import BenchSpec, build_hard_bench, build_random_bench, fit_predictor
from .dataset import ingest_csv
from .mmd import bound_report
from .harness import (
    BENCH_CSV_HEADER,
    MMD_CSV_HEADER,
    MMD_SUMMARY_CSV_HEADER,
    SIM_CSV_HEADER,
    THEORY_CSV_HEADER,
    ExperimentConfig,
    run_bench_e2e,
    run_bias_report,
    run_crossover_report,
    run_mmd_ordering,
    run_simulation,
    run_theory,
    write_csv,
    write_result,
)
from .nnet import SCORE_CSV_HEADER, score_dataset


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems on stderr with exit code 1."""

    def error(self, message: str):
        print(f"error: {message}", file=sys.stderr)
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip() != "")


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip() != "")


def _build_parser() -> _Parser:
    parser = _Parser(prog="hardbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory")

    p_sim = sub.add_parser("simulate", help="teacher-student sampling sweeps")
    common(p_sim)
    p_sim.add_argument("--experiment", choices=["sim_random", "sim_hard", "sim_biased"])
    p_sim.add_argument("--d", type=int)
    p_sim.add_argument("--alphas", type=_float_list)
    p_sim.add_argument("--thetas", type=_float_list, help="bias angles in degrees")
    p_sim.add_argument("--seeds", type=_int_list)
    p_sim.add_argument("--seed-override", type=int, help="replace the seed list with one seed")
    p_sim.add_argument("--pool-factor", type=int)

    p_th = sub.add_parser("theory", help="saddle-point curve over an alpha grid")
    common(p_th)
    p_th.add_argument("--alpha-min", type=float, default=None)
    p_th.add_argument("--alpha-max", type=float, default=None)
    p_th.add_argument("--points", type=int, default=None)
    p_th.add_argument("--alphas", type=_float_list)
    p_th.add_argument("--keep-fraction", type=float)

    p_mmd = sub.add_parser("mmd", help="discrepancy vs bias angle")
    common(p_mmd)
    p_mmd.add_argument("--d", type=int)
    p_mmd.add_argument("--n", type=int)
    p_mmd.add_argument("--p", type=int)
    p_mmd.add_argument("--trials", type=int)
    p_mmd.add_argument("--thetas", type=_float_list, help="bias angles in degrees")
    p_mmd.add_argument("--seed", type=int)
    # illustrative distribution-shift bound (constants are not identifiable
    # from data): c=1, delta=0.05, eps terms 0, |H|=d unless overridden
    p_mmd.add_argument("--bound-margin", type=float,
                       help="also evaluate the shift bound at this training margin")
    p_mmd.add_argument("--bound-c", type=float, default=1.0)
    p_mmd.add_argument("--bound-delta", type=float, default=0.05)

    p_score = sub.add_parser("score", help="difficulty-score a CSV dataset")
    common(p_score)
    p_score.add_argument("--input", required=True, help="dataset CSV path")
    p_score.add_argument("--label-column", default="label")
    p_score.add_argument("--epochs", type=int, default=1)
    p_score.add_argument("--predictor-seed", type=int, default=0)

    p_sel = sub.add_parser("select", help="build a benchmark selection from a CSV dataset")
    common(p_sel)
    p_sel.add_argument("--input", required=True, help="dataset CSV path")
    p_sel.add_argument("--label-column", default="label")
    p_sel.add_argument("--strategy", choices=["hard", "random"], default="hard")
    p_sel.add_argument("--metric", choices=["loss", "gradnorm", "ntk_diag"], default="loss")
    p_sel.add_argument("--k", type=int, default=16)
    p_sel.add_argument("--epochs", type=int, default=1)
    p_sel.add_argument("--predictor-seed", type=int, default=0)

    p_bench = sub.add_parser("bench", help="end-to-end hard/random benchmark on blobs")
    common(p_bench)
    p_bench.add_argument("--metrics", type=lambda s: tuple(s.split(",")))
    p_bench.add_argument("--k", type=int)
    p_bench.add_argument("--epochs", type=int)
    p_bench.add_argument("--predictor-seeds", type=_int_list)

    p_rep = sub.add_parser("report", help="crossover / bias summaries from simulate outputs")
    common(p_rep)
    p_rep.add_argument("--input", required=True, help="directory holding simulation.json")
    p_rep.add_argument("--kind", choices=["crossover", "bias", "both"], default="both")

    return parser


def _load_config(args, experiment_fallback: str) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.from_file(args.config)
    else:
        config = ExperimentConfig(experiment=experiment_fallback)
    return config


def _resolve_out(args, config: ExperimentConfig) -> str:
    if getattr(args, "out", None):
        return args.out
    env = os.environ.get("HARDBENCH_OUT")
    if env:
        return env
    return config.out_dir


def _apply_sim_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    updates = {}
    if args.experiment:
        updates["experiment"] = args.experiment
    if args.d:
        updates["d"] = args.d
    if args.alphas:
        updates["alphas"] = args.alphas
    if args.thetas:
        updates["thetas_deg"] = args.thetas
    if args.seeds:
        updates["seeds"] = args.seeds
    if args.seed_override is not None:
        updates["seeds"] = (args.seed_override,)
    if args.pool_factor:
        updates["pool_factor"] = args.pool_factor
    return replace(config, **updates) if updates else config


def _cmd_simulate(args) -> int:
    config = _apply_sim_overrides(_load_config(args, "sim_random"), args)
    if config.experiment not in ("sim_random", "sim_hard", "sim_biased"):
        config = replace(config, experiment="sim_random")
    out = _resolve_out(args, config)
    result = run_simulation(config)
    write_result(result, out, "simulation", SIM_CSV_HEADER)
    print(f"simulate: {len(result.rows)} rows, {len(result.failures)} failed cells -> {out}")
    return 0 if result.rows else 2


def _cmd_theory(args) -> int:
    config = _load_config(args, "theory_curve")
    updates = {"experiment": "theory_curve"}
    if args.alphas:
        updates["alphas"] = args.alphas
    elif args.alpha_min is not None or args.alpha_max is not None or args.points is not None:
        if None in (args.alpha_min, args.alpha_max, args.points):
            raise ConfigError("--alpha-min, --alpha-max and --points must be given together")
        if args.points < 1 or args.alpha_min <= 0 or args.alpha_max <= args.alpha_min:
            raise ConfigError("need 0 < alpha-min < alpha-max and points >= 1")
        updates["alphas"] = tuple(
            float(a) for a in np.geomspace(args.alpha_min, args.alpha_max, args.points)
        )
    if args.keep_fraction is not None:
        updates["keep_fraction"] = args.keep_fraction
    config = replace(config, **updates)
    out = _resolve_out(args, config)
    result = run_theory(config)
    write_result(result, out, "theory", THEORY_CSV_HEADER)
    print(f"theory: {len(result.rows)} rows -> {out}")
    return 0


def _cmd_mmd(args) -> int:
    config = _load_config(args, "mmd_ordering")
    updates = {"experiment": "mmd_ordering"}
    if args.d:
        updates["mmd_d"] = args.d
    if args.n:
        updates["mmd_n"] = args.n
    if args.p:
        updates["mmd_p"] = args.p
    if args.trials:
        updates["mmd_trials"] = args.trials
    if args.thetas:
        updates["thetas_deg"] = args.thetas
    if args.seed is not None:
        updates["mmd_seed"] = args.seed
    config = replace(config, **updates)
    out = _resolve_out(args, config)
    result, aggregate = run_mmd_ordering(config)
    write_result(result, out, "mmd_ordering", MMD_CSV_HEADER)
    write_csv(Path(out) / "mmd_summary.csv", MMD_SUMMARY_CSV_HEADER, aggregate)
    if args.bound_margin is not None:
        rows = []
        for agg in aggregate:
            # the U-statistic can dip below zero; the bound's mmd term cannot
            rep = bound_report(
                max(agg["mean_mmd2"], 0.0), args.bound_margin, c=args.bound_c,
                hypothesis_size=config.mmd_d, delta=args.bound_delta,
            )
            rows.append({
                "theta_deg": agg["theta_deg"], "mmd_term": rep.mmd_term,
                "margin_term": rep.margin_term, "eps_alpha": rep.eps_alpha,
                "eps_hypothesis": rep.eps_hypothesis, "total_rhs_excess": rep.total_rhs_excess,
            })
        (Path(out) / "bound_report.json").write_text(json.dumps(rows, sort_keys=True, indent=1) + "\n")
    print(f"mmd: {len(result.rows)} trial rows, {len(aggregate)} summary rows -> {out}")
    return 0


def _cmd_score(args) -> int:
    config = _load_config(args, "score_dataset")
    config = replace(config, experiment="score_dataset", input_csv=args.input,
                     label_column=args.label_column, bench_epochs=args.epochs)
    ds = ingest_csv(args.input, args.label_column)
    spec = BenchSpec(metric="loss", k=1, epochs=args.epochs, predictor_seed=args.predictor_seed)
    model = fit_predictor(ds, spec)
    scores = score_dataset(model, ds)
    out = Path(_resolve_out(args, config))
    out.mkdir(parents=True, exist_ok=True)
    path = out / "scores.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_CSV_HEADER)
        for s in scores:
            writer.writerow(s.csv_row())
    print(f"score: {len(scores)} rows -> {path}")
    return 0


def _cmd_select(args) -> int:
    config = _load_config(args, "score_dataset")
    ds = ingest_csv(args.input, args.label_column)
    if args.strategy == "hard":
        spec = BenchSpec(metric=args.metric, k=args.k, epochs=args.epochs,
                         predictor_seed=args.predictor_seed)
        selection = build_hard_bench(ds, spec)
    else:
        selection = build_random_bench(ds, args.k, [args.predictor_seed])[0]
    out = Path(_resolve_out(args, config))
    out.mkdir(parents=True, exist_ok=True)
    path = out / "selection.json"
    path.write_text(selection.to_json() + "\n", encoding="utf-8")
    print(f"select: {selection.P} indices -> {path}")
    return 0


def _cmd_bench(args) -> int:
    config = _load_config(args, "bench_e2e")
    updates = {"experiment": "bench_e2e"}
    if args.metrics:
        updates["bench_metrics"] = args.metrics
    if args.k:
        updates["bench_k"] = args.k
    if args.epochs:
        updates["bench_epochs"] = args.epochs
    if args.predictor_seeds:
        updates["bench_predictor_seeds"] = args.predictor_seeds
    config = replace(config, **updates)
    out = _resolve_out(args, config)
    result = run_bench_e2e(config)
    write_result(result, out, "bench_results", BENCH_CSV_HEADER + ["selection"])
    print(f"bench: {len(result.rows)} rows, {len(result.failures)} failures -> {out}")
    return 0 if result.rows else 2


def _cmd_report(args) -> int:
    src = Path(args.input) / "simulation.json"
    if not src.exists():
        raise ConfigError(f"no simulation.json under {args.input}")
    payload = json.loads(src.read_text(encoding="utf-8"))
    rows = payload["rows"]
    out = Path(args.out or os.environ.get("HARDBENCH_OUT") or args.input)
    out.mkdir(parents=True, exist_ok=True)
    wrote = []
    if args.kind in ("crossover", "both"):
        settings = {r["setting"] for r in rows}
        if "hard" in settings:
            report = run_crossover_report(rows)
            (out / "crossover.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
            wrote.append("crossover.json")
            print("crossover:", report["message"])
    if args.kind in ("bias", "both"):
        if any(str(r["setting"]).startswith("biased_") for r in rows):
            report = run_bias_report(rows)
            (out / "bias_report.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
            wrote.append("bias_report.json")
            print(
                "bias: delta increasing in theta:",
                report["delta_increasing_in_theta_at_small_alpha"],
                "| low alpha hurts more:",
                report["all_low_alpha_hurt_more"],
            )
    if not wrote:
        raise ConfigError("input rows contain no settings matching the requested report kind")
    return 0


def cli_entry(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {
        "simulate": _cmd_simulate,
        "theory": _cmd_theory,
        "mmd": _cmd_mmd,
        "score": _cmd_score,
        "select": _cmd_select,
        "bench": _cmd_bench,
        "report": _cmd_report,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure path
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(cli_entry())


if __name__ == "__main__":
    main()
