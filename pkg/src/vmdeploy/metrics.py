"""Run observations, their aggregation, boot-time density estimates and
CSV/JSON export."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .model import PHASES

# Column schema per record kind: (name, type). ``time`` and ``subject`` are implicit.
SCHEMAS: dict[str, list[tuple[str, type]]] = {
    "vm_boot": [("request_id", int), ("group_id", str), ("image_id", str), ("node_id", str),
                ("state", str), ("arrival", float), ("ready", float), ("boot_time", float)]
               + [(f"{p}_s", float) for p in PHASES],
    "decision": [("request_id", int), ("node_id", str), ("omega_digest", str), ("tie", bool),
                 ("tie_size", int)],
    "fetch": [("node_id", str), ("image_id", str), ("reason", str), ("requested", float),
              ("started", float), ("completed", float), ("attached", int)],
    "link_sample": [("channel", str), ("rate_bps", int), ("capacity_bps", int)],
    "link_total": [("channel", str), ("bytes", int)],
    "catalog_egress": [("bytes", int), ("mean_rate_bps", float)],
}
KINDS = tuple(SCHEMAS)


@dataclass
class MetricRecord:
    kind: str
    time: float
    subject: str
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCHEMAS:
            raise ValueError(f"unknown record kind {self.kind!r}")


class Recorder:
    """Append-only record log."""

    def __init__(self):
        self.records: list[MetricRecord] = []

    def add(self, kind: str, time: float, subject: str, **values) -> MetricRecord:
        rec = MetricRecord(kind, time, str(subject), values)
        self.records.append(rec)
        return rec

    def of_kind(self, kind: str) -> list[MetricRecord]:
        return [r for r in self.records if r.kind == kind]


@dataclass
class GroupSummary:
    count: int
    first_ready: float
    all_ready: float


@dataclass
class RunSummary:
    vms: int = 0
    active: int = 0
    failed: int = 0
    boot_mean: Optional[float] = None
    boot_median: Optional[float] = None
    boot_p95: Optional[float] = None
    groups: dict = field(default_factory=dict)
    bytes_by_link: dict = field(default_factory=dict)
    catalog_egress_bytes: int = 0
    cold_fetches: dict = field(default_factory=dict)
    prefetches: dict = field(default_factory=dict)

    @property
    def makespan(self) -> Optional[float]:
        if not self.groups:
            return None
        return max(g.all_ready for g in self.groups.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["makespan"] = self.makespan
        return d


def summarize(records: Iterable[MetricRecord]) -> RunSummary:
    """Aggregate a finished run. Group makespan = last ready - first arrival."""
    records = list(records)
    boots = [r for r in records if r.kind == "vm_boot"]
    summary = RunSummary(vms=len(boots))
    active = [r for r in boots if r.values["state"] == "active"]
    summary.active = len(active)
    summary.failed = len(boots) - len(active)
    if active:
        times = np.array(sorted(r.values["boot_time"] for r in active))
        summary.boot_mean = float(times.mean())
        summary.boot_median = float(np.median(times))
        summary.boot_p95 = float(np.percentile(times, 95))
    by_group: dict[str, list] = {}
    for r in boots:
        by_group.setdefault(r.values["group_id"], []).append(r)
    for gid in sorted(by_group):
        rows = by_group[gid]
        ready = [r.values["ready"] for r in rows if r.values["state"] == "active"]
        if not ready:
            continue
        t0 = min(r.values["arrival"] for r in rows)
        summary.groups[gid] = GroupSummary(len(rows), min(ready) - t0, max(ready) - t0)
    for r in records:
        if r.kind == "link_total":
            summary.bytes_by_link[r.values["channel"]] = r.values["bytes"]
        elif r.kind == "catalog_egress":
            summary.catalog_egress_bytes = r.values["bytes"]
        elif r.kind == "fetch":
            target = summary.cold_fetches if r.values["reason"] == "demand" else summary.prefetches
            target[r.values["image_id"]] = target.get(r.values["image_id"], 0) + 1
    summary.bytes_by_link = dict(sorted(summary.bytes_by_link.items()))
    summary.cold_fetches = dict(sorted(summary.cold_fetches.items()))
    summary.prefetches = dict(sorted(summary.prefetches.items()))
    return summary


def silverman_bandwidth(x) -> float:
    """0.9 * min(std, IQR/1.34) * n^(-1/5); falls back to std when the IQR is zero."""
    x = np.asarray(x, dtype=float)
    std = x.std(ddof=1)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(std, (q75 - q25) / 1.34) if q75 > q25 else std
    return 0.9 * spread * x.size ** -0.2


def kde(samples, bandwidth: Union[str, float] = "silverman", grid_points: int = 512,
        cut: float = 4.0) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian kernel density on a regular grid over [min - cut*h, max + cut*h]."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two samples")
    if bandwidth == "silverman":
        h = silverman_bandwidth(x)
    elif bandwidth == "scott":
        h = 1.06 * x.std(ddof=1) * x.size ** -0.2
    else:
        h = float(bandwidth)
    if not h > 0:
        raise ValueError("degenerate bandwidth (all samples identical?)")
    grid = np.linspace(x.min() - cut * h, x.max() + cut * h, grid_points)
    z = (grid[:, None] - x[None, :]) / h
    density = np.exp(-0.5 * z * z).sum(axis=1) / (x.size * h * np.sqrt(2 * np.pi))
    return grid, density


# -- export -------------------------------------------------------------------

def _columns(kinds: Sequence[str]) -> list[str]:
    cols = ["kind", "time", "subject"]
    for kind in kinds:
        for name, _ in SCHEMAS[kind]:
            if name not in cols:
                cols.append(name)
    return cols


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def export(obj, path, fmt: str = "csv") -> None:
    """Write records or a RunSummary. Column order is fixed per record kind."""
    path = Path(path)
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    if isinstance(obj, RunSummary):
        _export_summary(obj, path, fmt)
        return
    records = list(obj)
    if fmt == "json":
        rows = [{"kind": r.kind, "time": r.time, "subject": r.subject,
                 **{name: r.values.get(name) for name, _ in SCHEMAS[r.kind]}} for r in records]
        path.write_text(json.dumps(rows, indent=1) + "\n")
        return
    kinds = [k for k in KINDS if any(r.kind == k for r in records)]
    cols = _columns(kinds)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for r in records:
            row = {"kind": r.kind, "time": r.time, "subject": r.subject, **r.values}
            writer.writerow([_cell(row.get(c)) for c in cols])


def _export_summary(summary: RunSummary, path: Path, fmt: str) -> None:
    data = summary.to_dict()
    if fmt == "json":
        path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "subject", "value"])
        for key in ("vms", "active", "failed", "boot_mean", "boot_median", "boot_p95", "makespan",
                    "catalog_egress_bytes"):
            writer.writerow([key, "", _cell(data[key])])
        for gid, g in data["groups"].items():
            for key in ("count", "first_ready", "all_ready"):
                writer.writerow([f"group_{key}", gid, _cell(g[key])])
        for section in ("bytes_by_link", "cold_fetches", "prefetches"):
            for subject, value in data[section].items():
                writer.writerow([section, subject, _cell(value)])


def _parse(value: str, typ: type):
    if value == "":
        return None
    if typ is bool:
        return value == "true"
    return typ(value)


def load_records(path, fmt: str = "csv") -> list[MetricRecord]:
    path = Path(path)
    if fmt == "json":
        out = []
        for row in json.loads(path.read_text()):
            kind = row.pop("kind")
            time = row.pop("time")
            subject = row.pop("subject")
            out.append(MetricRecord(kind, time, subject, row))
        return out
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kind = row["kind"]
            values = {name: _parse(row[name], typ) for name, typ in SCHEMAS[kind]}
            out.append(MetricRecord(kind, float(row["time"]), row["subject"], values))
    return out


def export_phase_timeline(vms, path) -> None:
    """One row per (VM, phase): the data behind a boot chart."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["vm_id", "node_id", "phase", "start", "end"])
        for vm in vms:
            for phase, start, end in vm.phase_timeline:
                writer.writerow([vm.vm_id, vm.node_id or "", phase, start / 1e6, end / 1e6])
