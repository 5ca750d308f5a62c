"""Request streams: fixed batches, Poisson arrival traces, Zipf image
popularity and CSV trace files."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .kernel import US_PER_S, format_us, to_us
from .model import Flavor, VmRequest

TRACE_COLUMNS = ["arrival_seconds", "image_id", "vcpus", "ram_bytes", "root_bytes",
                 "ephemeral_bytes", "group_id"]


class TraceFormatError(ValueError):
    pass


@dataclass
class BatchSpec:
    groups: list  # (image_id, vm_count)
    per_host_cap: int = 8
    flavor: Flavor = Flavor()

    @property
    def total(self) -> int:
        return sum(count for _, count in self.groups)


def table1_row(name: str, image_prefix: str = "img", flavor: Flavor = Flavor()) -> BatchSpec:
    """The four batch requests: 1x192, 2x96, 4x48, 8x24 (images x VMs per image)."""
    try:
        n_images, per_image = (int(x) for x in name.split("x"))
    except ValueError:
        raise ValueError(f"bad batch row {name!r}; expected e.g. '8x24'") from None
    return BatchSpec([(f"{image_prefix}{i}", per_image) for i in range(n_images)], 8, flavor)


TABLE1_ROWS = ("1x192", "2x96", "4x48", "8x24")


@dataclass
class Trace:
    requests: list = field(default_factory=list)

    def __post_init__(self):
        for a, b in zip(self.requests, self.requests[1:]):
            if b.arrival_time < a.arrival_time:
                raise ValueError(f"request {b.request_id} arrives before request {a.request_id}")

    def __len__(self) -> int:
        return len(self.requests)

    def __iter__(self):
        return iter(self.requests)

    def __eq__(self, other) -> bool:
        return isinstance(other, Trace) and self.requests == other.requests

    def shifted(self, offset_us: int) -> "Trace":
        return Trace([VmRequest(r.request_id, r.arrival_time + offset_us, r.image_id, r.flavor,
                                r.group_id) for r in self.requests])


def generate_batch(spec: BatchSpec) -> Trace:
    """Every request at t=0, grouped by image in the order given."""
    requests = []
    for g, (image_id, count) in enumerate(spec.groups):
        for _ in range(count):
            requests.append(VmRequest(len(requests), 0, image_id, spec.flavor, f"g{g}"))
    return Trace(requests)


@dataclass
class TraceSpec:
    rate_per_hour: float
    duration_s: float
    pool: Sequence[str]
    law: str = "uniform"
    zipf_s: float = 1.0
    flavor: Flavor = Flavor()

    def __post_init__(self):
        if self.rate_per_hour <= 0:
            raise ValueError("rate_per_hour must be positive")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if not self.pool:
            raise ValueError("image pool is empty")
        if self.law not in ("uniform", "zipf"):
            raise ValueError(f"unknown image choice law {self.law!r}")


def zipf_pmf(k: int, s: float) -> np.ndarray:
    ranks = np.arange(1, k + 1, dtype=float)
    weights = ranks ** -float(s)
    return weights / weights.sum()


def generate_zipf_popularity(k: int, s: float, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` zero-based image ranks drawn with P(rank r) proportional to r^-s."""
    if k < 1:
        raise ValueError("pool size must be >= 1")
    if s < 0:
        raise ValueError("zipf exponent must be >= 0")
    if k == 1:
        return np.zeros(n, dtype=int)
    return rng.choice(k, size=n, p=zipf_pmf(k, s))


def generate_poisson_trace(spec: TraceSpec, arrivals_rng: np.random.Generator,
                           images_rng: Optional[np.random.Generator] = None) -> Trace:
    """Exponential inter-arrival gaps with mean 3600/rate seconds over ``duration_s``."""
    images_rng = images_rng if images_rng is not None else arrivals_rng
    mean_gap = 3600.0 / spec.rate_per_hour
    times = []
    t = 0.0
    while True:
        t += arrivals_rng.exponential(mean_gap)
        if t > spec.duration_s:
            break
        times.append(to_us(t))
    pool = list(spec.pool)
    if spec.law == "uniform":
        picks = images_rng.integers(len(pool), size=len(times))
    else:
        picks = generate_zipf_popularity(len(pool), spec.zipf_s, images_rng, len(times))
    return Trace([VmRequest(i, at, pool[int(p)], spec.flavor, "trace")
                  for i, (at, p) in enumerate(zip(times, picks))])


def save_trace(trace: Trace, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for r in trace:
            f = r.flavor
            writer.writerow([format_us(r.arrival_time), r.image_id, f.vcpus, f.ram_bytes,
                             f.root_disk_bytes, f.ephemeral_bytes, r.group_id])


def _parse_seconds(text: str) -> int:
    text = text.strip()
    if text.startswith("-"):
        raise ValueError("negative arrival time")
    whole, _, frac = text.partition(".")
    if not whole.isdigit() or (frac and not frac.isdigit()) or len(frac) > 6:
        raise ValueError(f"bad time {text!r}")
    return int(whole) * US_PER_S + int(frac.ljust(6, "0") or 0)


def load_trace(path) -> Trace:
    path = Path(path)
    requests = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_COLUMNS:
            raise TraceFormatError(f"{path}:1: expected header {','.join(TRACE_COLUMNS)}")
        last = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != len(TRACE_COLUMNS):
                    raise ValueError(f"expected {len(TRACE_COLUMNS)} fields, got {len(row)}")
                at = _parse_seconds(row[0])
                if at < last:
                    raise ValueError("arrivals out of order")
                flavor = Flavor(int(row[2]), int(row[3]), int(row[4]), int(row[5]))
                if not row[1]:
                    raise ValueError("empty image_id")
                requests.append(VmRequest(len(requests), at, row[1], flavor, row[6]))
                last = at
            except ValueError as exc:
                raise TraceFormatError(f"{path}:{lineno}: {exc}") from None
    return Trace(requests)
