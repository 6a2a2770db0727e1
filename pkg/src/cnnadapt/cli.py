"""Command-line front end: run scenarios, compare presets, check gradients.

Exit codes: 0 success, 2 validation/usage failure, 3 a requested run
diverged, 4 gradient check exceeded tolerance.
"""

from __future__ import annotations

import argparse
import csv
import statistics
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .gradcheck import gradient_check
from .jacobian import assemble_full_jacobian
from .network import forward
from .presets import (
    COMPARISON_ORDER,
    PRESET_NAMES,
    REPORTED_RMSE,
    conv_network,
    dense_network,
    minimal_network,
    preset,
)
from .scenario import emit_scenario, load_scenario, output_stem
from .sim import run_scenario

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3
EXIT_GRADCHECK = 4

_GRADCHECK_ARCHES = {
    "minimal": minimal_network,
    "cnn1": conv_network,
    "dnn": dense_network,
}


def _resolve_scenario(arg: str):
    path = Path(arg)
    if path.exists():
        sc = load_scenario(path)
        return sc, output_stem(path, sc)
    if arg in PRESET_NAMES:
        return preset(arg), arg
    raise ConfigError(f"no scenario file {arg!r} and no preset of that name")


def cmd_run(args) -> int:
    try:
        sc, stem = _resolve_scenario(args.scenario)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = run_scenario(sc, seed=args.seed, engine=args.engine)
    result.to_csv(out_dir / f"{stem}_traj.csv")
    summary = result.summary_text()
    (out_dir / f"{stem}_summary.txt").write_text(summary)
    (out_dir / f"{stem}_scenario.toml").write_text(emit_scenario(sc, stem=stem))
    print(summary, end="")
    if result.diverged:
        print(f"error: run diverged at t={result.diverged_at:.6f} s",
              file=sys.stderr)
        return EXIT_DIVERGENCE
    return EXIT_OK


def _fmt_pair(values) -> str:
    if not values:
        return "      n/a          "
    med = statistics.median(values)
    return f"{med:7.4f} [{min(values):7.4f}, {max(values):7.4f}]"


def cmd_compare(args) -> int:
    names = [n for n in (args.presets or "").split(",") if n]
    if not names:
        print("error: --presets needs at least one preset name", file=sys.stderr)
        return EXIT_VALIDATION
    for name in names:
        if name not in PRESET_NAMES:
            print(f"error: unknown preset {name!r}; available: "
                  + ", ".join(PRESET_NAMES), file=sys.stderr)
            return EXIT_VALIDATION
    if args.seeds < 1:
        print("error: --seeds must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for name in names:
        for k in range(args.seeds):
            seed = args.seed_base + k
            result = run_scenario(preset(name), seed=seed, engine=args.engine)
            rows.append((name, seed, result))
            state = ("diverged at t={:.3f}".format(result.diverged_at)
                     if result.diverged else
                     f"e1={result.rmse[0]:.4f} e2={result.rmse[1]:.4f}")
            print(f"{name} seed={seed}: {state}", flush=True)

    csv_path = out_dir / "compare_results.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["preset", "seed", "eps1", "eps2", "diverged"])
        for name, seed, result in rows:
            writer.writerow([
                name, seed,
                "" if result.diverged else f"{result.rmse[0]:.10g}",
                "" if result.diverged else f"{result.rmse[1]:.10g}",
                int(result.diverged),
            ])

    lines = [
        "tracking RMSE over the full horizon, median [min, max] across seeds",
        f"seeds: {args.seed_base}..{args.seed_base + args.seeds - 1}",
        "",
        f"{'preset':<20} {'eps1':<29} {'eps2':<29} "
        f"{'reported e1/e2':<17} diverged",
    ]
    for name in names:
        runs = [r for n, _, r in rows if n == name]
        ok = [r for r in runs if not r.diverged]
        e1 = [float(r.rmse[0]) for r in ok]
        e2 = [float(r.rmse[1]) for r in ok]
        ref = REPORTED_RMSE.get(name)
        ref_txt = f"{ref[0]:.4f}/{ref[1]:.4f}" if ref else "-"
        lines.append(
            f"{name:<20} {_fmt_pair(e1):<29} {_fmt_pair(e2):<29} "
            f"{ref_txt:<17} {len(runs) - len(ok)}/{len(runs)}"
        )
    lines.append("")
    lines.append("reported values are the published comparison; display only")
    first = rows[0][2]
    lines.append(
        f"declared settings: t_end={first.t_end:g} s, record_dt="
        f"{first.record_dt:g} s, per-preset dt as archived in presets/"
    )
    table = "\n".join(lines) + "\n"
    (out_dir / "compare_summary.txt").write_text(table)
    print()
    print(table, end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    if args.arch in _GRADCHECK_ARCHES:
        spec = _GRADCHECK_ARCHES[args.arch]()
        stem = args.arch
    else:
        try:
            sc = load_scenario(args.arch)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        spec = sc.network
        stem = Path(args.arch).stem

    def analytic(s, theta, X):
        return assemble_full_jacobian(forward(s, theta, X), theta, s)

    result = gradient_check(
        spec, analytic, trials=args.trials, step=args.step, seed=args.seed
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = out_dir / f"gradcheck_{stem}.csv"
    result.write_csv(report)
    print(
        f"gradcheck {stem}: {args.trials} trials, step {args.step:g}, "
        f"{spec.weight_count()} coordinates, max normalized error "
        f"{result.max_error:.3e} -> {'pass' if result.passed else 'FAIL'}"
    )
    print(f"report: {report}")
    if not result.passed:
        print("worst coordinates (index, normalized error):", file=sys.stderr)
        for idx, err in result.worst_coordinates():
            print(f"  {idx:6d}  {err:.3e}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cnnadapt",
        description="Closed-loop adaptive-CNN tracking control experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario file or preset")
    p_run.add_argument("scenario", help="scenario TOML path or preset name")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
    p_run.add_argument("--out", default=".", help="output directory")
    p_run.add_argument("--engine", choices=["auto", "fast", "reference"],
                       default=None)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run presets over seeds, tabulate")
    p_cmp.add_argument("--presets", default=",".join(COMPARISON_ORDER),
                       help="comma-separated preset names")
    p_cmp.add_argument("--seeds", type=int, default=5,
                       help="number of seeds per preset")
    p_cmp.add_argument("--seed-base", type=int, default=0)
    p_cmp.add_argument("--out", default=".", help="output directory")
    p_cmp.add_argument("--engine", choices=["auto", "fast", "reference"],
                       default=None)
    p_cmp.set_defaults(func=cmd_compare)

    p_gc = sub.add_parser("gradcheck",
                          help="compare analytic Jacobians to finite differences")
    p_gc.add_argument("--arch", default="cnn1",
                      help="minimal | cnn1 | dnn | scenario TOML path")
    p_gc.add_argument("--trials", type=int, default=20)
    p_gc.add_argument("--step", type=float, default=1e-6)
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.add_argument("--out", default=".", help="output directory")
    p_gc.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
