"""Single runs with on-disk artifacts, protocol x scheduler x seed sweeps,
and static scenario checks."""

from __future__ import annotations

import csv
import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .metrics import GroupSummary, RunSummary, export, export_phase_timeline
from .scenario import Scenario, ScenarioError
from .simulation import RunResult, run_scenario


@dataclass
class RunManifest:
    scenario: str
    digest: str
    seed: int
    artifacts: dict = field(default_factory=dict)
    tool_version: str = __version__

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=1, sort_keys=True) + "\n"


def write_decisions(decisions, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["request_id", "node_id", "omega_digest", "tie"])
        for d in decisions:
            writer.writerow([d.request_id, d.node_id, d.omega_digest(), "true" if d.tie else "false"])


def run(scenario: Scenario, out_dir, seed: Optional[int] = None, fmt: str = "csv",
        event_log: bool = False) -> tuple[RunResult, RunManifest]:
    """Run one scenario and write records, summary, timelines, decisions and a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = run_scenario(scenario, seed=seed, event_log=event_log)
    artifacts = {
        "scenario": "scenario.yaml",
        "records": f"records.{fmt}",
        "summary": f"summary.{fmt}",
        "phases": "phases.csv",
        "decisions": "decisions.csv",
    }
    (out / "scenario.yaml").write_text(scenario.to_yaml())
    export(result.records, out / artifacts["records"], fmt)
    export(result.summary, out / artifacts["summary"], fmt)
    export_phase_timeline(result.vms, out / artifacts["phases"])
    write_decisions(result.decisions, out / artifacts["decisions"])
    if event_log:
        artifacts["events"] = "events.csv"
        result.engine.dump_log(out / "events.csv")
    manifest = RunManifest(scenario.name, scenario.digest(), result.seed, artifacts)
    (out / "manifest.json").write_text(manifest.to_json())
    return result, manifest


def _check_axis(name: str, values: Sequence) -> list:
    values = list(values)
    if not values:
        raise ValueError(f"sweep axis {name} is empty")
    if len(set(values)) != len(values):
        raise ValueError(f"sweep axis {name} has duplicate values: {values}")
    return values


def _cell(args) -> dict:
    scenario_data, source, protocol, scheduler, seed, out_dir, fmt = args
    base = Scenario.from_dict(scenario_data, source)
    cell = base.replace(**{"protocol.kind": protocol, "scheduler.preset": scheduler})
    if out_dir is not None:
        result, _ = run(cell, Path(out_dir) / f"{protocol}-{scheduler}-s{seed}", seed=seed, fmt=fmt)
    else:
        result = run_scenario(cell, seed=seed)
    s = result.summary
    return {"protocol": protocol, "scheduler": scheduler, "seed": seed, "vms": s.vms,
            "failed": s.failed, "boot_mean": s.boot_mean, "boot_median": s.boot_median,
            "boot_p95": s.boot_p95, "makespan": s.makespan,
            "catalog_egress_bytes": s.catalog_egress_bytes,
            "cold_fetches": sum(s.cold_fetches.values())}


AGG_FIELDS = ("boot_mean", "boot_p95", "makespan", "catalog_egress_bytes", "cold_fetches")


def sweep(scenario: Scenario, protocols: Sequence[str], schedulers: Sequence[str],
          seeds: Sequence[int], out_dir=None, fmt: str = "csv", jobs: int = 1) -> tuple[list, list]:
    """One run per (protocol, scheduler, seed) cell.

    Returns ``(rows, aggregate)``: per-run rows and one row per
    (protocol, scheduler) with mean and sample standard deviation over seeds.
    """
    protocols = _check_axis("protocols", protocols)
    schedulers = _check_axis("schedulers", schedulers)
    seeds = _check_axis("seeds", seeds)
    tasks = [(scenario.data, scenario.source, p, s, seed, out_dir, fmt)
             for p in protocols for s in schedulers for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_cell, tasks))
    else:
        rows = [_cell(t) for t in tasks]
    aggregate = []
    for p in protocols:
        for s in schedulers:
            cell = [r for r in rows if r["protocol"] == p and r["scheduler"] == s]
            agg = {"protocol": p, "scheduler": s, "runs": len(cell)}
            for f in AGG_FIELDS:
                vals = [r[f] for r in cell if r[f] is not None]
                agg[f"{f}_mean"] = statistics.fmean(vals) if vals else None
                agg[f"{f}_std"] = statistics.stdev(vals) if len(vals) > 1 else 0.0
            aggregate.append(agg)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(rows, out / "sweep.csv")
        _write_rows(aggregate, out / "aggregate.csv")
    return rows, aggregate


def _write_rows(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def validate(ref) -> ValidationReport:
    """Static check of a scenario file or built-in name; lists every problem found."""
    try:
        scenario = Scenario.resolve(str(ref))
    except ScenarioError as exc:
        return ValidationReport(errors=list(exc.errors))
    except (OSError, ValueError) as exc:
        return ValidationReport(errors=[str(exc)])
    return ValidationReport(warnings=list(scenario.warnings))


def load_summary_json(path) -> RunSummary:
    data = json.loads(Path(path).read_text())
    data.pop("makespan", None)
    data["groups"] = {k: GroupSummary(**v) for k, v in data["groups"].items()}
    return RunSummary(**data)
