"""Image delivery onto compute nodes.

Three protocols share one interface, :meth:`TransferManager.ensure_image`:

* ``central``: one flow catalog -> node per cold fetch (HTTP or FTP alike).
* ``swarm``: BitTorrent-style piece exchange; the catalog is a permanent
  seed and every node holding pieces uploads them to other nodes.
* ``shared``: images are reachable from every node without moving bytes.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .kernel import Engine, EventKind, to_us
from .model import Catalog, ComputeNode, ImageSpec
from .network import FlowNetwork

log = logging.getLogger(__name__)


class ProtocolKind(str, Enum):
    CENTRAL = "central"
    SWARM = "swarm"
    SHARED = "shared"


@dataclass(frozen=True)
class TransferProtocol:
    kind: ProtocolKind = ProtocolKind.CENTRAL
    # what a central run stands for ("http" or "ftp"); informational only
    label: str = "http"
    max_active_downloads: int = 3
    max_uploads: int = 4
    catalog_uploads: Optional[int] = None
    max_requests: int = 4
    piece_policy: str = "rarest"
    publish_delay_s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ProtocolKind(self.kind))
        for name in ("max_active_downloads", "max_uploads", "max_requests"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.catalog_uploads is not None and self.catalog_uploads <= 0:
            raise ValueError("catalog_uploads must be positive")
        if self.piece_policy not in ("rarest", "random"):
            raise ValueError(f"unknown piece policy {self.piece_policy!r}")
        if self.publish_delay_s < 0:
            raise ValueError("publish_delay_s must be >= 0")


class CacheSpaceError(RuntimeError):
    """The image cannot be stored on the node, even after eviction."""


@dataclass(eq=False)
class FetchTicket:
    node_id: str
    image_id: str
    requested_at: int
    reason: str = "demand"
    waiters: list = field(default_factory=list, repr=False)
    started_at: Optional[int] = None
    completed_at: Optional[int] = None
    attached: int = 0  # requests that joined an in-flight fetch


@dataclass(eq=False)
class _Download:
    ticket: FetchTicket
    node: str
    image_id: str
    need: int  # bitmask of pieces neither held nor requested
    inflight: int = 0


@dataclass(eq=False)
class SwarmState:
    image: ImageSpec
    full: int
    have: dict = field(default_factory=dict)  # peer -> piece bitmask
    counts: list = field(default_factory=list)  # piece -> number of holders
    hungry: dict = field(default_factory=dict)  # ordered set of _Download


def _bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


class TransferManager:
    def __init__(self, engine: Engine, network: FlowNetwork, catalog: Catalog,
                 nodes: dict[str, ComputeNode], protocol: TransferProtocol = TransferProtocol(),
                 on_cache_change: Optional[Callable[[ComputeNode], None]] = None):
        self.engine = engine
        self.network = network
        self.catalog = catalog
        self.nodes = nodes
        self.protocol = protocol
        self.on_cache_change = on_cache_change
        self.tickets: dict[tuple[str, str], FetchTicket] = {}
        self.history: list[FetchTicket] = []
        self.evictions: list[tuple[int, str, str]] = []
        # swarm bookkeeping
        self._swarms: dict[str, SwarmState] = {}
        self._uploads: dict[str, int] = {}
        self._peer_images: dict[str, dict[str, None]] = {}
        self._active: dict[str, int] = {n: 0 for n in nodes}
        self._queued: dict[str, deque] = {n: deque() for n in nodes}
        self._peers = [catalog.endpoint, *nodes]
        self._rr = 0
        self._piece_rng = engine.rng("pieces")

    # -- cache ---------------------------------------------------------------

    def is_cached(self, node_id: str, image_id: str) -> bool:
        return image_id in self.nodes[node_id].cache

    def seed_cache(self, node_id: str, image_id: str) -> None:
        """Place an image in a node cache without a transfer (warm start)."""
        node = self.nodes[node_id]
        image = self.catalog[image_id]
        if image_id in node.cache:
            return
        self.evict_if_needed(node, image)
        node.disk_free -= image.size_bytes
        self._insert(node, image)

    def reserved_bytes(self, node: ComputeNode) -> int:
        ids = list(node.cache) + [i for i in node.inflight if i not in node.cache]
        return sum(self.catalog[i].size_bytes for i in ids)

    def evict_if_needed(self, node: ComputeNode, incoming: ImageSpec) -> list[str]:
        """LRU eviction until ``incoming`` fits the node's cache budget.

        Images pinned by VMs are never evicted. Without a budget nothing is
        evicted and a short disk is an error.
        """
        size = incoming.size_bytes
        budget = node.cache_budget
        if budget is not None and size > budget:
            raise CacheSpaceError(f"{incoming.image_id} ({size} B) exceeds cache budget of {node.node_id}")
        evicted: list[str] = []
        if budget is not None:
            used = self.reserved_bytes(node)
            victims = sorted((t, i) for i, t in node.cache.items() if not node.pins.get(i))
            while used + size > budget and victims:
                _, victim = victims.pop(0)
                self._evict(node, victim)
                evicted.append(victim)
                used -= self.catalog[victim].size_bytes
            if used + size > budget:
                raise CacheSpaceError(f"cannot make room for {incoming.image_id} on {node.node_id}")
        if node.disk_free < size:
            raise CacheSpaceError(f"disk full on {node.node_id}: need {size} B, free {node.disk_free} B")
        return evicted

    def _evict(self, node: ComputeNode, image_id: str) -> None:
        del node.cache[image_id]
        node.disk_free += self.catalog[image_id].size_bytes
        self.evictions.append((self.engine.now, node.node_id, image_id))
        sw = self._swarms.get(image_id)
        if sw is not None and node.node_id in sw.have:
            mask = sw.have.pop(node.node_id)
            for p in _bits(mask):
                sw.counts[p] -= 1
            self._peer_images.get(node.node_id, {}).pop(image_id, None)
        if self.on_cache_change:
            self.on_cache_change(node)

    def _insert(self, node: ComputeNode, image: ImageSpec) -> None:
        node.cache[image.image_id] = self.engine.now
        if self.protocol.kind is ProtocolKind.SWARM:
            sw = self._swarm(image.image_id)
            prev = sw.have.get(node.node_id, 0)
            for p in _bits(sw.full & ~prev):
                sw.counts[p] += 1
            sw.have[node.node_id] = sw.full
            self._peer_images.setdefault(node.node_id, {})[image.image_id] = None
        if self.on_cache_change:
            self.on_cache_change(node)

    # -- entry point -----------------------------------------------------------

    def ensure_image(self, node_id: str, image_id: str,
                     callback: Optional[Callable[[FetchTicket], None]] = None,
                     reason: str = "demand") -> Optional[FetchTicket]:
        """Make ``image_id`` available on ``node_id``.

        Returns None when the image is already usable (the caller proceeds
        with a zero-length download). Otherwise returns the fetch ticket,
        with ``callback`` attached; a fetch already in flight for the same
        pair is reused.
        """
        image = self.catalog[image_id]
        node = self.nodes[node_id]
        if self.protocol.kind is ProtocolKind.SHARED:
            return None
        if image_id in node.cache:
            node.cache[image_id] = self.engine.now
            return None
        ticket = self.tickets.get((node_id, image_id))
        if ticket is not None:
            ticket.attached += 1
        else:
            self.evict_if_needed(node, image)
            node.disk_free -= image.size_bytes
            ticket = FetchTicket(node_id, image_id, self.engine.now, reason)
            self.tickets[(node_id, image_id)] = ticket
            node.inflight[image_id] = ticket
            self.history.append(ticket)
            if self.protocol.kind is ProtocolKind.CENTRAL:
                self.central_fetch(ticket)
            else:
                self.swarm_fetch(ticket)
        if callback is not None:
            ticket.waiters.append(callback)
        return ticket

    def _complete(self, ticket: FetchTicket) -> None:
        node = self.nodes[ticket.node_id]
        ticket.completed_at = self.engine.now
        del self.tickets[(ticket.node_id, ticket.image_id)]
        del node.inflight[ticket.image_id]
        self._insert(node, self.catalog[ticket.image_id])
        for cb in ticket.waiters:
            cb(ticket)

    # -- central ------------------------------------------------------------

    def central_fetch(self, ticket: FetchTicket) -> None:
        image = self.catalog[ticket.image_id]
        ticket.started_at = self.engine.now
        self.network.start_flow(self.catalog.endpoint, ticket.node_id, image.size_bytes,
                                on_complete=lambda _f: self._complete(ticket),
                                tag=ticket.image_id)

    # -- swarm --------------------------------------------------------------

    def _swarm(self, image_id: str) -> SwarmState:
        sw = self._swarms.get(image_id)
        if sw is None:
            image = self.catalog[image_id]
            n = image.piece_count
            full = (1 << n) - 1
            sw = SwarmState(image, full, {self.catalog.endpoint: full}, [1] * n)
            self._swarms[image_id] = sw
            self._peer_images.setdefault(self.catalog.endpoint, {})[image_id] = None
        return sw

    def swarm_state(self, image_id: str) -> SwarmState:
        return self._swarm(image_id)

    def upload_limit(self, peer: str) -> int:
        if peer == self.catalog.endpoint and self.protocol.catalog_uploads is not None:
            return self.protocol.catalog_uploads
        return self.protocol.max_uploads

    def active_downloads(self, node_id: str) -> int:
        return self._active[node_id]

    def queued_downloads(self, node_id: str) -> int:
        return len(self._queued[node_id])

    def swarm_fetch(self, ticket: FetchTicket) -> None:
        if self._active[ticket.node_id] < self.protocol.max_active_downloads:
            self._activate(ticket)
        else:
            self._queued[ticket.node_id].append(ticket)

    def _activate(self, ticket: FetchTicket) -> None:
        self._active[ticket.node_id] += 1
        publish_at = to_us(self.protocol.publish_delay_s)
        if self.engine.now < publish_at:
            self.engine.schedule(publish_at, EventKind.PHASE_COMPLETE, lambda: self._join(ticket),
                                 ("publish", ticket.image_id))
        else:
            self._join(ticket)

    def _join(self, ticket: FetchTicket) -> None:
        ticket.started_at = self.engine.now
        sw = self._swarm(ticket.image_id)
        held = sw.have.get(ticket.node_id, 0)
        dl = _Download(ticket, ticket.node_id, ticket.image_id, sw.full & ~held)
        if dl.need == 0:  # cannot happen with a full bitmap outside the cache, but stay safe
            self._finish_download(dl)
            return
        sw.hungry[dl] = None
        self._fill()

    def _fill(self) -> None:
        """Hand free upload slots to downloads that want a piece the uploader holds."""
        peers = self._peers
        n = len(peers)
        start = self._rr
        self._rr = (self._rr + 1) % n
        for k in range(n):
            peer = peers[(start + k) % n]
            limit = self.upload_limit(peer)
            while self._uploads.get(peer, 0) < limit:
                if not self._serve_one(peer):
                    break

    def _serve_one(self, peer: str) -> bool:
        best = None
        best_img = None
        for image_id in self._peer_images.get(peer, ()):
            sw = self._swarms[image_id]
            if not sw.hungry:
                continue
            held = sw.have.get(peer, 0)
            for dl in sw.hungry:
                if dl.node != peer and held & dl.need:
                    if best is None or dl.ticket.requested_at < best.ticket.requested_at:
                        best, best_img = dl, sw
                    break
        if best is None:
            return False
        sw = best_img
        piece = self._pick_piece(sw, sw.have[peer] & best.need)
        bit = 1 << piece
        best.need &= ~bit
        best.inflight += 1
        del sw.hungry[best]
        if best.need and best.inflight < self.protocol.max_requests:
            sw.hungry[best] = None  # back of the line
        self._uploads[peer] = self._uploads.get(peer, 0) + 1
        self.network.start_flow(peer, best.node, sw.image.piece_bytes(piece),
                                on_complete=lambda _f, p=peer, d=best, i=piece: self._piece_done(p, d, i),
                                tag=sw.image.image_id)
        return True

    def _pick_piece(self, sw: SwarmState, candidates: int) -> int:
        pieces = list(_bits(candidates))
        if self.protocol.piece_policy == "rarest":
            counts = sw.counts
            rarest = min(counts[p] for p in pieces)
            pieces = [p for p in pieces if counts[p] == rarest]
        if len(pieces) == 1:
            return pieces[0]
        return pieces[int(self._piece_rng.integers(len(pieces)))]

    def _piece_done(self, peer: str, dl: _Download, piece: int) -> None:
        self._uploads[peer] -= 1
        dl.inflight -= 1
        sw = self._swarms[dl.image_id]
        bit = 1 << piece
        held = sw.have.get(dl.node, 0)
        assert not held & bit, "piece delivered twice"
        sw.have[dl.node] = held | bit
        sw.counts[piece] += 1
        self._peer_images.setdefault(dl.node, {})[dl.image_id] = None
        if sw.have[dl.node] == sw.full:
            self._finish_download(dl)
        elif dl.need and dl not in sw.hungry:
            sw.hungry[dl] = None
        self._fill()

    def _finish_download(self, dl: _Download) -> None:
        sw = self._swarms[dl.image_id]
        sw.hungry.pop(dl, None)
        # the bitmap is already full; _insert leaves counts untouched
        self._active[dl.node] -= 1
        self._complete(dl.ticket)
        queue = self._queued[dl.node]
        if queue:
            self._activate(queue.popleft())
