"""Pushing images to nodes ahead of demand: whole-catalog pre-deployment or
the k most popular images onto a fraction of the nodes."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

from .model import Catalog, ComputeNode

log = logging.getLogger(__name__)

KINDS = ("none", "full-predeploy", "top-k-popularity")


@dataclass(frozen=True)
class PrefetchPolicy:
    kind: str = "none"
    k: int = 1
    fraction: float = 1.0
    period_s: float = 0.0  # 0: plan once at t=0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown prefetch policy {self.kind!r}")
        if self.kind == "top-k-popularity" and self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must be in (0, 1]")
        if self.period_s < 0:
            raise ValueError("period_s must be >= 0")


@dataclass
class PrefetchPlan:
    placements: list = field(default_factory=list)  # (image_id, node_id)
    dropped: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.placements)


def rank_images_by_popularity(catalog: Catalog) -> list[str]:
    """Most spawned first; equal counts in image-id order."""
    return [img.image_id for img in
            sorted(catalog.images.values(), key=lambda i: (-i.popularity_count, i.image_id))]


def load_popularity_seed(path, catalog: Catalog) -> None:
    """Add counts from a CSV with header ``image_id,count``."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["image_id", "count"]:
            raise ValueError(f"{path}: expected header image_id,count")
        for lineno, row in enumerate(reader, start=2):
            count = int(row["count"])
            if count < 0:
                raise ValueError(f"{path}:{lineno}: negative count")
            catalog[row["image_id"]].popularity_count += count


def _has(node: ComputeNode, image_id: str) -> bool:
    return image_id in node.cache or image_id in node.inflight


def build_plan(policy: PrefetchPolicy, catalog: Catalog, nodes: Sequence[ComputeNode]) -> PrefetchPlan:
    if policy.kind == "none":
        raise ValueError("policy 'none' has no plan")
    plan = PrefetchPlan()
    planned_bytes = {n.node_id: 0 for n in nodes}

    def place(image_id: str, node: ComputeNode) -> None:
        size = catalog[image_id].size_bytes
        room = node.disk_free - planned_bytes[node.node_id]
        if node.cache_budget is not None:
            used = sum(catalog[i].size_bytes for i in {**node.cache, **node.inflight})
            room = min(room, node.cache_budget - used - planned_bytes[node.node_id])
        if room < size:
            log.warning("prefetch: dropping %s -> %s, not enough disk", image_id, node.node_id)
            plan.dropped.append((image_id, node.node_id))
            return
        planned_bytes[node.node_id] += size
        plan.placements.append((image_id, node.node_id))

    if policy.kind == "full-predeploy":
        for image_id in sorted(catalog.images):
            for node in nodes:
                if not _has(node, image_id):
                    place(image_id, node)
        return plan

    n_target = max(1, math.ceil(policy.fraction * len(nodes) - 1e-9))
    for image_id in rank_images_by_popularity(catalog)[:policy.k]:
        targets = sorted(nodes, key=lambda n: (-(n.disk_free - planned_bytes[n.node_id]), n.node_id))
        for node in targets[:n_target]:
            if not _has(node, image_id):
                place(image_id, node)
    return plan


def execute_plan(plan: PrefetchPlan, transfers) -> list:
    """Start one fetch per placement through the transfer manager; returns the tickets."""
    tickets = []
    for image_id, node_id in plan.placements:
        ticket = transfers.ensure_image(node_id, image_id, reason="prefetch")
        if ticket is not None:
            tickets.append(ticket)
    return tickets
