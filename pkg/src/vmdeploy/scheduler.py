"""Filter-then-weigh host placement.

Hosts failing any filter are dropped. Each weigher scores the survivors, the
scores are min-max rescaled to [0, 1] per weigher, and the host with the
largest multiplier-weighted sum wins. Exact ties are broken uniformly at
random.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .model import ComputeNode, VmRequest, claim_resources

Filter = Callable[[ComputeNode, VmRequest], bool]


class NoValidHost(RuntimeError):
    """No host passed the filter chain."""


@dataclass
class Weigher:
    name: str
    multiplier: float
    fn: Callable[[ComputeNode, VmRequest, "SchedulerConfig"], float] = field(repr=False)

    def __post_init__(self):
        if not np.isfinite(self.multiplier):
            raise ValueError(f"weigher {self.name}: multiplier must be finite")


def capacity_filter(host: ComputeNode, request: VmRequest) -> bool:
    return host.fits(request.flavor)


def max_instances_filter(limit: int) -> Filter:
    def _filter(host: ComputeNode, request: VmRequest) -> bool:
        return len(host.running) < limit
    _filter.__name__ = f"max_instances_{limit}"
    return _filter


def _cache_raw(host: ComputeNode, request: VmRequest, config: "SchedulerConfig") -> float:
    if request.image_id in host.reported_cache:
        return 1.0
    if config.count_inflight_as_cached and request.image_id in host.inflight:
        return 1.0
    return 0.0


def _free_ram_raw(host: ComputeNode, request: VmRequest, config: "SchedulerConfig") -> float:
    return float(host.ram_free)


def cache_weigher(multiplier: float = 10.0) -> Weigher:
    """1 for hosts reporting the requested image as cached, else 0."""
    return Weigher("cache", multiplier, _cache_raw)


def free_ram_weigher(multiplier: float = 1.0) -> Weigher:
    return Weigher("ram", multiplier, _free_ram_raw)


@dataclass
class SchedulerConfig:
    filters: list = field(default_factory=lambda: [capacity_filter])
    weighers: list = field(default_factory=lambda: [free_ram_weigher()])
    count_inflight_as_cached: bool = False

    def __post_init__(self):
        if not self.weighers:
            raise ValueError("at least one weigher is required")

    @classmethod
    def preset(cls, name: str, cache_multiplier: float = 10.0, ram_multiplier: float = 1.0,
               count_inflight_as_cached: bool = False) -> "SchedulerConfig":
        """``nocache``: free-RAM weigher only. ``cache``: free RAM plus the cache weigher."""
        if name == "nocache":
            weighers = [free_ram_weigher(ram_multiplier)]
        elif name == "cache":
            weighers = [cache_weigher(cache_multiplier), free_ram_weigher(ram_multiplier)]
        else:
            raise ValueError(f"unknown scheduler preset {name!r}")
        return cls(weighers=weighers, count_inflight_as_cached=count_inflight_as_cached)


@dataclass
class PlacementDecision:
    request_id: int
    node_id: str
    candidates: list
    raw: dict  # weigher name -> raw values, aligned with candidates
    normalized: dict
    omega: list
    tie_size: int = 1
    tie_draw: Optional[int] = None

    @property
    def tie(self) -> bool:
        return self.tie_size > 1

    def omega_digest(self) -> str:
        text = ",".join(f"{n}={w!r}" for n, w in zip(self.candidates, self.omega))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def filter_hosts(request: VmRequest, hosts: Sequence[ComputeNode],
                 filters: Sequence[Filter]) -> list[ComputeNode]:
    if not hosts:
        raise ValueError("host list is empty")
    return [h for h in hosts if all(f(h, request) for f in filters)]


def normalize(values) -> np.ndarray:
    """Min-max rescale to [0, 1]; all-equal input maps to all zeros."""
    w = np.asarray(values, dtype=float)
    if w.size == 0:
        raise ValueError("need at least one value")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    lo, hi = w.min(), w.max()
    if hi == lo:
        return np.zeros_like(w)
    return np.clip((w - lo) / (hi - lo), 0.0, 1.0)


def total_weight(normalized: Sequence[Sequence[float]], multipliers: Sequence[float]) -> np.ndarray:
    """Per-host sum of multiplier x normalized weight."""
    norm = np.asarray(normalized, dtype=float)
    if norm.ndim == 1:
        norm = norm[None, :]
    m = np.asarray(multipliers, dtype=float)
    if m.shape[0] != norm.shape[0]:
        raise ValueError("one multiplier per weigher")
    omega = np.zeros(norm.shape[1])
    for mi, row in zip(m, norm):
        omega += mi * row
    return omega


def select_host(omega: Sequence[float], rng: np.random.Generator) -> tuple[int, int, Optional[int]]:
    """Index of the max-weight candidate.

    Returns ``(index, tie_size, draw)``; ``draw`` is None when the maximum is
    unique (no random number is consumed then).
    """
    omega = np.asarray(omega, dtype=float)
    if omega.size == 0:
        raise ValueError("no candidates")
    best = omega.max()
    tied = np.flatnonzero(omega == best)
    if tied.size == 1:
        return int(tied[0]), 1, None
    draw = int(rng.integers(tied.size))
    return int(tied[draw]), int(tied.size), draw


def schedule(request: VmRequest, hosts: Sequence[ComputeNode], config: SchedulerConfig,
             rng: np.random.Generator, claim: bool = True) -> PlacementDecision:
    """Filter, weigh, normalize, sum, select, then claim resources on the winner."""
    candidates = filter_hosts(request, hosts, config.filters)
    if not candidates:
        raise NoValidHost(f"request {request.request_id}: no valid host")
    raw = {}
    normalized = {}
    for w in config.weighers:
        raw[w.name] = [w.fn(h, request, config) for h in candidates]
        normalized[w.name] = normalize(raw[w.name])
    omega = total_weight([normalized[w.name] for w in config.weighers],
                         [w.multiplier for w in config.weighers])
    idx, tie_size, draw = select_host(omega, rng)
    chosen = candidates[idx]
    if claim and not claim_resources(chosen, request.flavor):
        raise RuntimeError(f"{chosen.node_id} passed the filters but refused the claim")
    return PlacementDecision(
        request_id=request.request_id,
        node_id=chosen.node_id,
        candidates=[h.node_id for h in candidates],
        raw=raw,
        normalized={k: v.tolist() for k, v in normalized.items()},
        omega=omega.tolist(),
        tie_size=tie_size,
        tie_draw=draw,
    )
