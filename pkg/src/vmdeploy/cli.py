"""Command line: run, sweep, validate, gen-trace, report.

Exit codes: 0 ok, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from .experiments import run, sweep, validate
from .kernel import rng_stream
from .metrics import kde, load_records, summarize
from .model import GB, Flavor
from .scenario import Scenario, ScenarioError, builtin_names
from .workload import TraceSpec, generate_poisson_trace, save_trace

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def _csv_list(text: str, cast=str) -> list:
    return [cast(x) for x in text.split(",") if x]


def _print_summary(summary) -> None:
    print(f"vms={summary.vms} active={summary.active} failed={summary.failed}")
    if summary.boot_mean is not None:
        print(f"boot mean={summary.boot_mean:.3f}s median={summary.boot_median:.3f}s "
              f"p95={summary.boot_p95:.3f}s makespan={summary.makespan:.3f}s")
    for gid, g in summary.groups.items():
        print(f"group {gid}: n={g.count} first_ready={g.first_ready:.3f}s all_ready={g.all_ready:.3f}s")
    print(f"catalog egress={summary.catalog_egress_bytes} B "
          f"cold fetches={sum(summary.cold_fetches.values())}")


def cmd_run(args) -> int:
    scenario = Scenario.resolve(args.scenario)
    for w in scenario.warnings:
        print(f"warning: {w}", file=sys.stderr)
    result, manifest = run(scenario, args.out, seed=args.seed, fmt=args.format, event_log=args.event_log)
    print(f"{scenario.name} seed={manifest.seed} digest={manifest.digest[:12]} -> {args.out}")
    _print_summary(result.summary)
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = Scenario.resolve(args.scenario)
    seeds = _csv_list(args.seeds, int) if args.seeds else [args.seed if args.seed is not None else scenario.seed]
    try:
        _, aggregate = sweep(scenario, _csv_list(args.protocols), _csv_list(args.schedulers), seeds,
                             args.out, args.format, args.jobs)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    for row in aggregate:
        print(f"{row['protocol']:8s} {row['scheduler']:8s} runs={row['runs']} "
              f"boot_mean={row['boot_mean_mean']:.2f}±{row['boot_mean_std']:.2f}s "
              f"makespan={row['makespan_mean']:.2f}s egress={row['catalog_egress_bytes_mean']:.0f}B")
    return EXIT_OK


def cmd_validate(args) -> int:
    report = validate(args.scenario)
    for e in report.errors:
        print(f"error: {e}")
    for w in report.warnings:
        print(f"warning: {w}")
    if report.ok:
        print("ok")
    return EXIT_OK if report.ok else EXIT_VALIDATION


def cmd_gen_trace(args) -> int:
    pool = _csv_list(args.pool) if args.pool else [f"img{i}" for i in range(args.images)]
    flavor = Flavor(args.vcpus, int(args.ram_gb * GB), int(args.root_gb * GB), int(args.ephemeral_gb * GB))
    try:
        spec = TraceSpec(args.rate, args.duration, pool, args.law, args.zipf_s, flavor)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    trace = generate_poisson_trace(spec, rng_stream(args.seed, "arrivals"), rng_stream(args.seed, "images"))
    save_trace(trace, args.out)
    print(f"{len(trace)} requests -> {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    fmt = "json" if (run_dir / "records.json").exists() and not (run_dir / "records.csv").exists() else "csv"
    records = load_records(run_dir / f"records.{fmt}", fmt)
    summary = summarize(records)
    _print_summary(summary)
    boots = [r.values["boot_time"] for r in records
             if r.kind == "vm_boot" and r.values["boot_time"] is not None]
    if len(boots) >= 2 and len(set(boots)) > 1:
        grid, density = kde(boots)
        out = run_dir / "boot_kde.csv"
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["boot_time", "density"])
            writer.writerows(zip(grid.tolist(), density.tolist()))
        print(f"boot-time density -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vmdeploy", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario")
    p.add_argument("--scenario", required=True, help="YAML file or built-in name")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--event-log", action="store_true", help="also write events.csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="protocol x scheduler x seed grid")
    p.add_argument("--scenario", required=True)
    p.add_argument("--protocols", default="central,swarm")
    p.add_argument("--schedulers", default="cache,nocache")
    p.add_argument("--seeds", help="comma-separated seeds, e.g. 1,2,3")
    p.add_argument("--seed", type=int, help="single seed (when --seeds is not given)")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="check a scenario without running it")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen-trace", help="write a Poisson-arrival trace CSV")
    p.add_argument("--rate", type=float, required=True, help="VMs per hour")
    p.add_argument("--duration", type=float, default=3600.0, help="seconds")
    p.add_argument("--images", type=int, default=4)
    p.add_argument("--pool", help="comma-separated image ids (overrides --images)")
    p.add_argument("--law", choices=("uniform", "zipf"), default="uniform")
    p.add_argument("--zipf-s", type=float, default=1.0)
    p.add_argument("--vcpus", type=int, default=1)
    p.add_argument("--ram-gb", type=float, default=2)
    p.add_argument("--root-gb", type=float, default=10)
    p.add_argument("--ephemeral-gb", type=float, default=0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("report", help="summarize a run directory and write its boot-time density")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_report)

    sub.add_parser("list", help="list built-in scenarios").set_defaults(
        func=lambda a: print("\n".join(builtin_names())) or EXIT_OK)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - surface any simulation failure as exit code 2
        print(f"runtime error: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
