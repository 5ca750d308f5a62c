"""Datacenter entities: images, the catalog, compute nodes, requests and VM
boot timelines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

GB = 1_000_000_000
MB = 1_000_000

# Boot pipeline, in the order a compute node runs it.
PHASES = ("claim", "download", "duplication", "resize", "ephemeral", "injection", "netconfig")


class UnknownImageError(KeyError):
    pass


@dataclass
class ImageSpec:
    image_id: str
    size_bytes: int
    piece_size_bytes: int = 32 * MB
    popularity_count: int = 0

    def __post_init__(self):
        if self.size_bytes <= 0:
            raise ValueError(f"image {self.image_id}: size_bytes must be positive")
        if self.piece_size_bytes <= 0:
            raise ValueError(f"image {self.image_id}: piece_size_bytes must be positive")

    @property
    def piece_count(self) -> int:
        return math.ceil(self.size_bytes / self.piece_size_bytes)

    def piece_bytes(self, index: int) -> int:
        if not 0 <= index < self.piece_count:
            raise IndexError(index)
        if index == self.piece_count - 1:
            return self.size_bytes - index * self.piece_size_bytes
        return self.piece_size_bytes


@dataclass
class Catalog:
    """Image repository. Always holds every piece of every registered image."""

    images: dict[str, ImageSpec] = field(default_factory=dict)
    endpoint: str = "catalog"

    def register(self, image: ImageSpec) -> ImageSpec:
        if image.image_id in self.images:
            raise ValueError(f"duplicate image id {image.image_id!r}")
        self.images[image.image_id] = image
        return image

    def __getitem__(self, image_id: str) -> ImageSpec:
        try:
            return self.images[image_id]
        except KeyError:
            raise UnknownImageError(image_id) from None

    def __contains__(self, image_id: str) -> bool:
        return image_id in self.images

    def record_spawn(self, image_id: str) -> None:
        self[image_id].popularity_count += 1


@dataclass(frozen=True)
class Flavor:
    vcpus: int = 1
    ram_bytes: int = 2 * GB
    root_disk_bytes: int = 10 * GB
    ephemeral_bytes: int = 0

    def __post_init__(self):
        if self.vcpus <= 0 or self.ram_bytes <= 0 or self.root_disk_bytes <= 0:
            raise ValueError(f"flavor fields must be positive: {self}")
        if self.ephemeral_bytes < 0:
            raise ValueError(f"ephemeral_bytes must be >= 0: {self}")

    @property
    def disk_bytes(self) -> int:
        return self.root_disk_bytes + self.ephemeral_bytes


@dataclass
class ComputeNode:
    node_id: str
    vcpus_total: int = 8
    ram_total: int = 16 * GB
    disk_total: int = 140 * GB
    disk_bandwidth: int = 100 * MB
    cache_budget: Optional[int] = None
    vcpus_free: int = -1
    ram_free: int = -1
    disk_free: int = -1
    # image_id -> last-used time (us); insertion order is irrelevant, LRU uses the value
    cache: dict[str, int] = field(default_factory=dict)
    # images with a fetch in flight to this node
    inflight: dict[str, object] = field(default_factory=dict)
    # what the scheduler currently believes is cached (may lag ``cache``)
    reported_cache: frozenset = frozenset()
    # image_id -> number of VMs that still need the base image
    pins: dict[str, int] = field(default_factory=dict)
    running: list = field(default_factory=list)

    def __post_init__(self):
        if self.vcpus_free < 0:
            self.vcpus_free = self.vcpus_total
        if self.ram_free < 0:
            self.ram_free = self.ram_total
        if self.disk_free < 0:
            self.disk_free = self.disk_total

    def cache_bytes(self, catalog: Catalog) -> int:
        return sum(catalog[i].size_bytes for i in self.cache)

    def fits(self, flavor: Flavor) -> bool:
        return (self.vcpus_free >= flavor.vcpus and self.ram_free >= flavor.ram_bytes
                and self.disk_free >= flavor.disk_bytes)


def claim_resources(node: ComputeNode, flavor: Flavor) -> bool:
    """Reserve the flavor on ``node``. Returns False, leaving the node untouched, if it does not fit."""
    if not node.fits(flavor):
        return False
    node.vcpus_free -= flavor.vcpus
    node.ram_free -= flavor.ram_bytes
    node.disk_free -= flavor.disk_bytes
    return True


def release_resources(node: ComputeNode, flavor: Flavor) -> None:
    node.vcpus_free += flavor.vcpus
    node.ram_free += flavor.ram_bytes
    node.disk_free += flavor.disk_bytes
    assert node.vcpus_free <= node.vcpus_total and node.ram_free <= node.ram_total
    assert node.disk_free <= node.disk_total


@dataclass(frozen=True)
class PhaseConstants:
    """Fixed durations (seconds) of the boot phases that do not scale with data size."""

    claim: float = 1.0
    cow: float = 1.0
    resize: float = 2.0
    inject: float = 2.0
    net: float = 2.0


def disk_work(flavor: Flavor, image: ImageSpec, cow: bool) -> dict[str, int]:
    """Bytes that the disk-bound phases write in raw mode; empty under CoW."""
    if cow:
        return {}
    work = {"duplication": image.size_bytes}
    if flavor.ephemeral_bytes:
        work["ephemeral"] = flavor.ephemeral_bytes
    return work


def boot_phase_durations(node: ComputeNode, flavor: Flavor, image: ImageSpec, cow: bool,
                         image_local: bool, constants: PhaseConstants = PhaseConstants()
                         ) -> dict[str, Optional[float]]:
    """Uncontended duration of each boot phase in seconds.

    ``download`` is None when the image must be fetched; the transfer
    protocol decides that one.
    """
    bw = node.disk_bandwidth
    if cow:
        duplication = constants.cow
        ephemeral = constants.cow if flavor.ephemeral_bytes else 0.0
    else:
        duplication = image.size_bytes / bw
        ephemeral = flavor.ephemeral_bytes / bw
    return {
        "claim": constants.claim,
        "download": 0.0 if image_local else None,
        "duplication": duplication,
        "resize": constants.resize,
        "ephemeral": ephemeral,
        "injection": constants.inject,
        "netconfig": constants.net,
    }


@dataclass
class VmRequest:
    request_id: int
    arrival_time: int  # us
    image_id: str
    flavor: Flavor = Flavor()
    group_id: str = "0"

    def __post_init__(self):
        if self.arrival_time < 0:
            raise ValueError(f"request {self.request_id}: negative arrival time")


@dataclass
class VmInstance:
    request: VmRequest
    node_id: Optional[str] = None
    state: str = "scheduled"  # scheduled | booting | active | failed
    phase_timeline: list[tuple[str, int, int]] = field(default_factory=list)
    failure: Optional[str] = None

    @property
    def vm_id(self) -> str:
        return f"vm{self.request.request_id:05d}"

    def add_phase(self, phase: str, start: int, end: int) -> None:
        expected = PHASES[len(self.phase_timeline)]
        if phase != expected:
            raise ValueError(f"{self.vm_id}: phase {phase} out of order, expected {expected}")
        if self.phase_timeline and start != self.phase_timeline[-1][2]:
            raise ValueError(f"{self.vm_id}: phase {phase} is not contiguous")
        if end < start:
            raise ValueError(f"{self.vm_id}: phase {phase} ends before it starts")
        self.phase_timeline.append((phase, start, end))

    def phase_duration(self, phase: str) -> int:
        for name, start, end in self.phase_timeline:
            if name == phase:
                return end - start
        raise KeyError(phase)

    @property
    def ready_at(self) -> Optional[int]:
        if self.state != "active":
            return None
        return self.phase_timeline[-1][2]

    @property
    def boot_time(self) -> Optional[int]:
        ready = self.ready_at
        return None if ready is None else ready - self.request.arrival_time
