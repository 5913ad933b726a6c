"""Command-line front end: ``qfluct {run,sweep,validate,presets}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys

import numpy as np

from .estimators import auto_histogram
from .experiment import (
    PRESETS,
    ConfigError,
    ExperimentResult,
    Scenario,
    ScenarioParams,
    apply_overrides,
    load_config,
    parse_config_text,
    preset,
    run_scenario,
    scenario_to_items,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
SIG_DIGITS = 12

LEDGER_HEADER = [
    "point",
    "trajectory_index",
    "u_i",
    "u_f",
    "W",
    "Q_cl",
    "Q_q",
    "Q_cl_measured",
    "dis",
    "dis_measured",
    "n_clicks1",
    "n_clicks2",
    "sigma",
]
HIST_HEADER = ["point", "quantity", "bin_lo", "bin_hi", "count"]
SWEEP_STAT_COLUMNS = [
    "n_traj",
    "n_steps",
    "dt",
    "je_mean",
    "je_stderr",
    "mean_dis",
    "dis_stderr",
    "corrected_je_mean",
    "corrected_je_stderr",
]


def _num(x):
    """Round to 12 significant digits; NaN and infinities become ``None``."""
    if x is None:
        return None
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return int(x)
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.{SIG_DIGITS}g}")


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.{SIG_DIGITS}g}"


def _point_summary(i, p) -> dict:
    c = p.corrected
    return {
        "point": i,
        "label": {k: _num(v) for k, v in p.label.items()},
        "n_traj": p.stats.n_traj,
        "n_steps": p.n_steps,
        "dt": _num(p.dt),
        "eta": _num(p.params.eta),
        "delta_f": _num(p.delta_f),
        "je_mean": _num(p.stats.je_mean),
        "je_stderr": _num(p.stats.je_stderr),
        "mean_dis": _num(p.stats.mean_dis),
        "dis_stderr": _num(p.stats.dis_stderr),
        "corrected_je_mean": _num(c.je_mean) if c else None,
        "corrected_je_stderr": _num(c.je_stderr) if c else None,
        "min_effective_sample_size": _num(p.min_ess),
        "max_first_law_residual": _num(p.max_first_law_residual),
    }


def write_outputs(result: ExperimentResult, out_dir: str, sweep_table: bool) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    name = result.scenario.name
    written = []

    stats_path = os.path.join(out_dir, f"{name}_stats.json")
    doc = {
        "scenario": name,
        "config": scenario_to_items(result.scenario),
        "seed": result.scenario.seed,
        "git": result.metadata.get("git", "unknown"),
        "points": [_point_summary(i, p) for i, p in enumerate(result.points)],
    }
    with open(stats_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(stats_path)

    ledger_path = os.path.join(out_dir, f"{name}_ledgers.csv")
    with open(ledger_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LEDGER_HEADER)
        for i, p in enumerate(result.points):
            lb = p.ledgers
            if lb is None:
                continue
            sig = p.sigmas if p.sigmas is not None else np.zeros(len(lb))
            cols = (
                lb.trajectory_index,
                lb.u_initial,
                lb.u_final,
                lb.work,
                lb.q_classical,
                lb.q_quantum,
                lb.q_classical_measured,
                lb.entropy_production,
                lb.entropy_production_measured,
                lb.n_clicks1,
                lb.n_clicks2,
                sig,
            )
            for row in zip(*cols):
                w.writerow([i] + [_fmt(v) for v in row])
    written.append(ledger_path)

    hist_path = os.path.join(out_dir, f"{name}_hist.csv")
    with open(hist_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HIST_HEADER)
        for i, p in enumerate(result.points):
            hists = {"dis_measured": p.stats.histogram}
            if p.ledgers is not None and np.isfinite(p.ledgers.q_quantum).any():
                hists["Q_q"] = auto_histogram(p.ledgers.q_quantum)
            for qty, h in hists.items():
                if h is None:
                    continue
                w.writerow([i, qty, "-inf", _fmt(h.edges[0]), h.underflow])
                for lo, hi, c in zip(h.edges[:-1], h.edges[1:], h.counts):
                    w.writerow([i, qty, _fmt(lo), _fmt(hi), int(c)])
                w.writerow([i, qty, _fmt(h.edges[-1]), "inf", h.overflow])
    written.append(hist_path)

    if sweep_table:
        sweep_path = os.path.join(out_dir, f"{name}_sweep.csv")
        params = list(result.scenario.sweep_params)
        with open(sweep_path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point", *params, *SWEEP_STAT_COLUMNS])
            for i, p in enumerate(result.points):
                s = _point_summary(i, p)
                vals = [p.label.get(k, math.nan) for k in params]
                stats = [s[k] if s[k] is not None else math.nan for k in SWEEP_STAT_COLUMNS]
                w.writerow([i, *(_fmt(v) for v in vals), *(_fmt(v) for v in stats)])
        written.append(sweep_path)
    return written


def summary_table(result: ExperimentResult) -> str:
    lines = []
    finite_eta = any(p.corrected is not None for p in result.points)
    head = f"{'point':<34} {'<exp(-dis)>':>22} {'<dis>':>22}"
    if finite_eta:
        head += f" {'corrected':>22}"
    lines.append(head)
    for p in result.points:
        label = ", ".join(f"{k}={v:g}" for k, v in p.label.items()) or result.scenario.name
        row = f"{label:<34} {p.stats.je_mean:>11.5f} ± {p.stats.je_stderr:<8.5f} {p.stats.mean_dis:>11.5f} ± {p.stats.dis_stderr:<8.5f}"
        if finite_eta:
            c = p.corrected
            row += f" {c.je_mean:>11.5f} ± {c.je_stderr:<8.5f}" if c else f" {'-':>22}"
        lines.append(row)
    return "\n".join(lines)


def _parse_sets(pairs) -> dict[str, str]:
    items = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        items[k.strip()] = v.strip()
    return items


def build_scenario(args) -> Scenario:
    if args.preset is None and args.config is None:
        raise ConfigError("give --preset or --config")
    full = getattr(args, "full_scale", False)
    if args.preset is not None:
        base = preset(args.preset, full_scale=full)
    else:
        base = Scenario("custom", ScenarioParams())
    scenario = load_config(args.config, base) if args.config else base
    items = _parse_sets(getattr(args, "set", None))
    if getattr(args, "n_traj", None) is not None:
        items["sim.n_traj"] = str(args.n_traj)
    if getattr(args, "seed", None) is not None:
        items["sim.seed"] = str(args.seed)
    if getattr(args, "eta", None) is not None:
        if "sim.eta" in scenario.sweep_params:
            raise ConfigError("--eta conflicts with a sweep over sim.eta")
        items["sim.eta"] = str(args.eta)
    return apply_overrides(scenario, items)


def _add_scenario_args(p: argparse.ArgumentParser, run: bool = True) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
    p.add_argument("--n-traj", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--full-scale", action="store_true", help="use the full trajectory count of the presets")
    if run:
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", default="out")
        p.add_argument(
            "--retain-ledgers",
            action=argparse.BooleanOptionalAction,
            default=True,
            help="keep per-trajectory ledgers and write them to <name>_ledgers.csv",
        )


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qfluct", description="Quantum-jump thermodynamics of a driven qubit.")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_scenario_args(sub.add_parser("run", help="run a preset or config file"))
    _add_scenario_args(sub.add_parser("sweep", help="run a parameter sweep and write <name>_sweep.csv"))
    _add_scenario_args(sub.add_parser("validate", help="check a config without running it"), run=False)
    sub.add_parser("presets", help="list the shipped scenarios")
    return parser


def parse_and_dispatch(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG

    if args.command == "presets":
        for name, s in PRESETS.items():
            print(f"{name:<8} {s.description}")
        return EXIT_OK

    try:
        scenario = build_scenario(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate":
        print(f"{scenario.name}: ok ({len(scenario.points())} point(s), {scenario.n_traj} trajectories each)")
        return EXIT_OK

    if args.threads is not None and args.threads < 1:
        print("config error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "sweep" and not scenario.sweep_params:
        print("config error: sweep needs sweep.param and sweep.grid", file=sys.stderr)
        return EXIT_CONFIG
    try:
        os.makedirs(args.out, exist_ok=True)
        if not os.access(args.out, os.W_OK):
            raise OSError(f"output directory {args.out!r} is not writable")
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        result = run_scenario(scenario, threads=args.threads, retain_ledgers=args.retain_ledgers)
        write_outputs(result, args.out, sweep_table=args.command == "sweep" or len(result.points) > 1)
    except (ArithmeticError, ValueError, RuntimeError, MemoryError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(summary_table(result))
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(parse_and_dispatch(argv))


if __name__ == "__main__":
    main()
