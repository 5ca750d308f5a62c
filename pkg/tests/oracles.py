"""Reference implementations used only by the tests. They are written
independently of the package code they check."""

from __future__ import annotations

import numpy as np


def unit_step_max_min(paths: dict, capacity: dict) -> dict:
    """Max-min fair integer rates by raising every unfrozen flow one byte/s at a time.

    A flow freezes as soon as some channel on its path cannot give one more
    unit to each of its unfrozen flows.
    """
    rate = {f: 0 for f in paths}
    frozen = set()
    while len(frozen) < len(paths):
        changed = True
        while changed:
            changed = False
            for ch, cap in capacity.items():
                users = [f for f, p in paths.items() if ch in p]
                active = [f for f in users if f not in frozen]
                if not active:
                    continue
                residual = cap - sum(rate[f] for f in users)
                if residual < len(active):
                    frozen.update(active)
                    changed = True
        for f in paths:
            if f not in frozen:
                rate[f] += 1
    return rate


def random_topology(rng: np.random.Generator, max_links: int = 5, max_flows: int = 8,
                    max_cap: int = 60):
    n_links = int(rng.integers(1, max_links + 1))
    n_flows = int(rng.integers(1, max_flows + 1))
    capacity = {f"L{i}": int(rng.integers(1, max_cap + 1)) for i in range(n_links)}
    names = list(capacity)
    paths = {}
    for f in range(n_flows):
        k = int(rng.integers(1, n_links + 1))
        paths[f"f{f}"] = list(rng.choice(names, size=k, replace=False))
    return paths, capacity


def trapezoid(y, x) -> float:
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    return float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2)
