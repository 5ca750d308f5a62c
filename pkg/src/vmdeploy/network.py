"""Fluid-flow network: full-duplex links, static routes and max-min fair rates.

Rates are integer bytes/s and flow progress is tracked in micro-bytes
(bytes x 10^6), so that ``rate * elapsed_us`` is exact and completion times
are exact integers of microseconds.
"""

from __future__ import annotations

import heapq
import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Optional, Sequence

from .kernel import US_PER_S, Engine, EventKind

GBIT = 125_000_000  # 1 Gbit/s in bytes/s


class NoRouteError(LookupError):
    pass


class UnknownFlowError(KeyError):
    pass


def max_min_rates(paths: Mapping[Hashable, Sequence[str]],
                  capacity: Mapping[str, int]) -> dict[Hashable, int]:
    """Integer max-min fair allocation by progressive filling.

    All unfrozen flows rise together; a channel with residual ``r`` and ``n``
    unfrozen flows stops them at level ``r // n``. Lowest such level first,
    freeze the flows there, update the other channels on their paths, repeat.
    """
    unfrozen: dict[str, int] = defaultdict(int)
    frozen_sum: dict[str, int] = defaultdict(int)
    on_channel: dict[str, list] = defaultdict(list)
    for fid, path in paths.items():
        if not path:
            raise ValueError(f"flow {fid!r} has an empty path")
        for ch in path:
            unfrozen[ch] += 1
            on_channel[ch].append(fid)

    def level(ch: str) -> int:
        return (capacity[ch] - frozen_sum[ch]) // unfrozen[ch]

    heap = [(level(ch), ch) for ch in unfrozen]
    heapq.heapify(heap)
    rates: dict[Hashable, int] = {}
    while heap:
        lvl, ch = heapq.heappop(heap)
        if unfrozen[ch] == 0 or lvl != level(ch):
            continue  # stale entry
        for fid in on_channel[ch]:
            if fid in rates:
                continue
            rates[fid] = lvl
            for other in paths[fid]:
                frozen_sum[other] += lvl
                unfrozen[other] -= 1
                if other != ch and unfrozen[other]:
                    heapq.heappush(heap, (level(other), other))
    return rates


@dataclass
class Topology:
    """Endpoints hang off switches through one full-duplex NIC each; switches
    are joined pairwise by trunks. Every channel is one direction of a link."""

    capacity: dict[str, int] = field(default_factory=dict)
    switch_of: dict[str, int] = field(default_factory=dict)

    @classmethod
    def testbed(cls, node_ids: Iterable[str], catalog: str = "catalog", nic_bps: int = GBIT,
                trunk_bps: int = 10 * GBIT, switches: int = 2,
                catalog_nic_bps: Optional[int] = None) -> "Topology":
        """Nodes spread round-robin over ``switches``; catalog on switch 0."""
        topo = cls()
        for i in range(switches):
            for j in range(i + 1, switches):
                topo.capacity[f"trunk:{i}-{j}:fwd"] = trunk_bps
                topo.capacity[f"trunk:{i}-{j}:rev"] = trunk_bps
        topo.add_endpoint(catalog, 0, catalog_nic_bps or nic_bps)
        for k, node in enumerate(node_ids):
            topo.add_endpoint(node, k % switches, nic_bps)
        return topo

    def add_endpoint(self, name: str, switch: int, nic_bps: int) -> None:
        if nic_bps <= 0:
            raise ValueError("link capacity must be positive")
        self.switch_of[name] = switch
        self.capacity[f"nic:{name}:up"] = nic_bps
        self.capacity[f"nic:{name}:down"] = nic_bps

    def add_disk(self, node: str, bandwidth: int) -> str:
        if bandwidth <= 0:
            raise ValueError("disk bandwidth must be positive")
        ch = f"disk:{node}"
        self.capacity[ch] = bandwidth
        return ch

    def route(self, src: str, dst: str) -> list[str]:
        if src not in self.switch_of or dst not in self.switch_of or src == dst:
            raise NoRouteError(f"no route {src} -> {dst}")
        a, b = self.switch_of[src], self.switch_of[dst]
        path = [f"nic:{src}:up"]
        if a != b:
            lo, hi = min(a, b), max(a, b)
            path.append(f"trunk:{lo}-{hi}:{'fwd' if a < b else 'rev'}")
        path.append(f"nic:{dst}:down")
        return path

    @staticmethod
    def is_network(channel: str) -> bool:
        return not channel.startswith("disk:")


@dataclass
class TransferFlow:
    flow_id: int
    src: Optional[str]
    dst: Optional[str]
    path: tuple
    size_bytes: int
    remaining_ub: int
    started_at: int
    rate: int = 0
    on_complete: Optional[Callable[["TransferFlow"], None]] = field(default=None, repr=False)
    tag: object = None

    @property
    def remaining_bytes(self) -> float:
        return self.remaining_ub / US_PER_S


class FlowNetwork:
    """Active flows on a topology, driven by engine events.

    Rates change only when a flow starts or finishes. Several changes at the
    same instant share one recompute, scheduled as a ``rate-recompute`` event
    at the current time.
    """

    def __init__(self, engine: Engine, topology: Topology, record_samples: bool = False):
        self.engine = engine
        self.topology = topology
        self.flows: dict[int, TransferFlow] = {}
        self._ids = itertools.count(1)
        self._last_advance = engine.now
        self._recompute_pending = False
        self._completion_token = 0
        self.channel_ub: dict[str, int] = defaultdict(int)
        self.injected_bytes = 0
        self.completed_bytes = 0
        self.flows_started = 0
        self.record_samples = record_samples
        self.samples: list[tuple[int, str, int]] = []
        self._channel_rate: dict[str, int] = {}

    # -- public operations -------------------------------------------------

    def start_flow(self, src: str, dst: str, nbytes: int,
                   on_complete: Optional[Callable[[TransferFlow], None]] = None, tag=None) -> int:
        path = self.topology.route(src, dst)
        return self._add(src, dst, path, nbytes, on_complete, tag)

    def start_path_flow(self, path: Sequence[str], nbytes: int,
                        on_complete: Optional[Callable[[TransferFlow], None]] = None, tag=None) -> int:
        for ch in path:
            if ch not in self.topology.capacity:
                raise NoRouteError(f"unknown channel {ch}")
        return self._add(None, None, list(path), nbytes, on_complete, tag)

    def rate(self, flow_id: int) -> int:
        self.flush()
        return self._flow(flow_id).rate

    def flush(self) -> None:
        """Bring rates up to date now instead of waiting for the pending recompute event."""
        if self._recompute_pending:
            self._recompute()

    def on_flow_complete(self, flow_id: int) -> None:
        flow = self._flow(flow_id)
        self._advance()
        if flow.remaining_ub > 0:
            raise RuntimeError(f"flow {flow_id} still has {flow.remaining_ub}ub to send")
        self._finish([flow])

    def bytes_on(self, channel: str) -> int:
        return self.channel_ub.get(channel, 0) // US_PER_S

    def network_bytes(self) -> dict[str, int]:
        return {ch: ub // US_PER_S for ch, ub in sorted(self.channel_ub.items())
                if Topology.is_network(ch)}

    def remaining_bytes_total(self) -> float:
        return sum(f.remaining_ub for f in self.flows.values()) / US_PER_S

    # -- internals ---------------------------------------------------------

    def _flow(self, flow_id: int) -> TransferFlow:
        try:
            return self.flows[flow_id]
        except KeyError:
            raise UnknownFlowError(flow_id) from None

    def _add(self, src, dst, path, nbytes, on_complete, tag) -> int:
        if nbytes <= 0:
            raise ValueError("flow size must be positive")
        self._advance()
        fid = next(self._ids)
        self.flows[fid] = TransferFlow(fid, src, dst, tuple(path), int(nbytes),
                                       int(nbytes) * US_PER_S, self.engine.now,
                                       on_complete=on_complete, tag=tag)
        self.injected_bytes += int(nbytes)
        self.flows_started += 1
        self._mark_dirty()
        return fid

    def _mark_dirty(self) -> None:
        if not self._recompute_pending:
            self._recompute_pending = True
            self.engine.schedule(self.engine.now, EventKind.RATE_RECOMPUTE, self._on_recompute_event,
                                 ("network",))

    def _on_recompute_event(self) -> None:
        if self._recompute_pending:
            self._recompute()

    def _advance(self) -> None:
        now = self.engine.now
        dt = now - self._last_advance
        if dt:
            ch_ub = self.channel_ub
            for flow in self.flows.values():
                if flow.rate:
                    sent = min(flow.rate * dt, flow.remaining_ub)
                    flow.remaining_ub -= sent
                    for ch in flow.path:
                        ch_ub[ch] += sent
        self._last_advance = now

    def _recompute(self) -> None:
        self._advance()
        self._recompute_pending = False
        rates = max_min_rates({fid: f.path for fid, f in self.flows.items()}, self.topology.capacity)
        for fid, flow in self.flows.items():
            flow.rate = rates[fid]
        if self.record_samples:
            self._sample()
        self._schedule_completion()

    def _sample(self) -> None:
        totals: dict[str, int] = defaultdict(int)
        for flow in self.flows.values():
            for ch in flow.path:
                totals[ch] += flow.rate
        now = self.engine.now
        for ch in sorted(set(totals) | set(self._channel_rate)):
            r = totals.get(ch, 0)
            if self._channel_rate.get(ch, 0) != r or ch not in self._channel_rate:
                self.samples.append((now, ch, r))
                self._channel_rate[ch] = r

    def _schedule_completion(self) -> None:
        self._completion_token += 1
        if not self.flows:
            return
        best = None
        for flow in self.flows.values():
            if flow.rate:
                dt = -(-flow.remaining_ub // flow.rate)
                if best is None or dt < best:
                    best = dt
        if best is None:
            raise RuntimeError("active flows but every rate is zero")
        token = self._completion_token
        self.engine.schedule(self.engine.now + best, EventKind.FLOW_COMPLETE,
                             lambda: self._on_completion_event(token), ("network",))

    def _on_completion_event(self, token: int) -> None:
        if token != self._completion_token:
            return  # superseded by a later recompute
        self._advance()
        done = [f for f in self.flows.values() if f.remaining_ub == 0]
        self._finish(done)

    def _finish(self, done: list[TransferFlow]) -> None:
        for flow in done:
            del self.flows[flow.flow_id]
            self.completed_bytes += flow.size_bytes
        self._completion_token += 1
        self._mark_dirty()
        for flow in done:
            if flow.on_complete is not None:
                flow.on_complete(flow)
