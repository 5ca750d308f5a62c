from collections import Counter

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from vmdeploy import Scenario
from vmdeploy.kernel import rng_stream
from vmdeploy.model import GB, ComputeNode, Flavor, VmRequest
from vmdeploy.scheduler import (NoValidHost, SchedulerConfig, Weigher, cache_weigher, capacity_filter,
                                filter_hosts, normalize, schedule, select_host,
                                total_weight)
from vmdeploy.simulation import Simulation


def hosts(n=24, **kw):
    return [ComputeNode(f"h{i:02d}", **kw) for i in range(n)]


def req(image="A", flavor=Flavor()):
    return VmRequest(1, 0, image, flavor)


# -- filters ---------------------------------------------------------------------

def test_all_hosts_full_fails():
    hs = hosts(4, vcpus_free=0)
    assert filter_hosts(req(), hs, [capacity_filter]) == []
    with pytest.raises(NoValidHost):
        schedule(req(), hs, SchedulerConfig(), rng_stream(0, "tiebreak"))


def test_flavor_fits_exactly_five_hosts():
    hs = hosts(24)
    roomy = {2, 7, 11, 19, 23}
    for i, h in enumerate(hs):
        if i not in roomy:
            h.ram_free = GB
    out = filter_hosts(req(), hs, [capacity_filter])
    assert {hs.index(h) for h in out} == roomy


def test_no_filters_is_identity():
    hs = hosts(5, vcpus_free=0)
    assert filter_hosts(req(), hs, []) == hs


def test_empty_host_list_rejected():
    with pytest.raises(ValueError):
        filter_hosts(req(), [], [capacity_filter])


@settings(max_examples=30)
@given(perm_seed=st.integers(0, 1000))
def test_filter_result_order_independent(perm_seed):
    hs = hosts(10)
    for i, h in enumerate(hs):
        h.vcpus_free = i % 3
    shuffled = list(np.random.default_rng(perm_seed).permutation(hs))
    a = {h.node_id for h in filter_hosts(req(), hs, [capacity_filter])}
    b = {h.node_id for h in filter_hosts(req(), shuffled, [capacity_filter])}
    assert a == b


# -- normalization and weighting --------------------------------------------------

def test_normalize_examples():
    assert normalize([2, 4, 6]).tolist() == [0, 0.5, 1]
    assert normalize([3, 3, 3]).tolist() == [0, 0, 0]
    w = np.array([0.0, 1.0])
    assert normalize(5 * w + 7).tolist() == [0, 1]


@settings(max_examples=100)
@given(w=st.lists(st.integers(-10**6, 10**6), min_size=1, max_size=24),
       a=st.integers(1, 1000), b=st.integers(-10**6, 10**6))
def test_normalize_range_and_affine_invariance(w, a, b):
    n = normalize(w)
    assert np.all((n >= 0) & (n <= 1))
    if max(w) > min(w):
        assert n[int(np.argmin(w))] == 0 and n[int(np.argmax(w))] == 1
    t = normalize([a * x + b for x in w])
    assert np.allclose(n, t, rtol=0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(w=st.lists(st.integers(0, 50), min_size=2, max_size=12), a=st.sampled_from([1, 2, 4, 8]),
       b=st.integers(-100, 100), seed=st.integers(0, 2**32 - 1))
def test_affine_transform_keeps_selection(w, a, b, seed):
    # integer inputs keep the rescale exact, so ties survive unchanged
    other = normalize(list(range(len(w))))
    om1 = total_weight([normalize(w), other], [1.0, 0.5])
    om2 = total_weight([normalize([a * x + b for x in w]), other], [1.0, 0.5])
    assert np.array_equal(om1, om2)
    assert select_host(om1, rng_stream(seed, "t")) == select_host(om2, rng_stream(seed, "t"))


def test_omega_examples():
    assert total_weight([[0, 0.5, 1]], [1]).tolist() == [0, 0.5, 1]
    assert total_weight([[1], [0.5]], [1, 2]).tolist() == [2.0]
    assert total_weight([[0.3, 1], [1, 0]], [0, 0]).tolist() == [0, 0]


def test_select_examples():
    rng = rng_stream(0, "tiebreak")
    assert select_host([0.2, 0.9, 0.1], rng) == (1, 1, None)


def test_tie_break_is_uniform():
    rng = rng_stream(12345, "tiebreak")
    n, k = 10_000, 24
    counts = Counter(select_host(np.zeros(k), rng)[0] for _ in range(n))
    p = 1 / k
    sigma = np.sqrt(n * p * (1 - p))
    assert len(counts) == k
    assert all(abs(counts[i] - n * p) <= 3 * sigma for i in range(k))


def test_tie_break_reproducible():
    a = [select_host(np.ones(24), rng_stream(9, "tiebreak"))[0] for _ in range(3)]
    assert len(set(a)) == 1


def test_nonfinite_multiplier_rejected():
    with pytest.raises(ValueError):
        Weigher("x", float("inf"), lambda h, r, c: 0.0)


def test_config_requires_a_weigher():
    with pytest.raises(ValueError):
        SchedulerConfig(weighers=[])


# -- cache weigher ---------------------------------------------------------------

def test_cache_weigher_values():
    cfg = SchedulerConfig(weighers=[cache_weigher()])
    w = cache_weigher()
    cached = ComputeNode("c", reported_cache=frozenset({"A"}))
    absent = ComputeNode("a")
    fetching = ComputeNode("f", inflight={"A": object()})
    assert w.fn(cached, req("A"), cfg) == 1
    assert w.fn(absent, req("A"), cfg) == 0
    assert w.fn(fetching, req("A"), cfg) == 0
    on = SchedulerConfig(weighers=[w], count_inflight_as_cached=True)
    assert w.fn(fetching, req("A"), on) == 1


def test_single_cached_host_always_chosen():
    cfg = SchedulerConfig(weighers=[cache_weigher(1.0)])
    for seed in range(50):
        hs = hosts(24)
        hs[13].reported_cache = frozenset({"A"})
        d = schedule(req("A"), hs, cfg, rng_stream(seed, "tiebreak"))
        assert d.node_id == "h13" and not d.tie


def test_empty_caches_place_uniformly():
    cfg = SchedulerConfig.preset("cache")
    rng = rng_stream(3, "tiebreak")
    n = 4800
    counts = Counter(schedule(req(), hosts(24), cfg, rng, claim=False).node_id for _ in range(n))
    sigma = np.sqrt(n / 24 * (1 - 1 / 24))
    assert len(counts) == 24
    assert all(abs(c - n / 24) <= 3 * sigma for c in counts.values())


def test_two_cached_hosts_split_evenly():
    cfg = SchedulerConfig.preset("cache")
    rng = rng_stream(4, "tiebreak")
    counts = Counter()
    n = 2000
    for _ in range(n):
        hs = hosts(24)
        hs[3].reported_cache = hs[17].reported_cache = frozenset({"A"})
        counts[schedule(req("A"), hs, cfg, rng).node_id] += 1
    assert set(counts) == {"h03", "h17"}
    assert abs(counts["h03"] - n / 2) <= 3 * np.sqrt(n / 4)


def test_schedule_claims_and_records_breakdown():
    hs = hosts(3)
    d = schedule(req(), hs, SchedulerConfig.preset("cache"), rng_stream(0, "tiebreak"))
    chosen = next(h for h in hs if h.node_id == d.node_id)
    assert chosen.vcpus_free == 7
    assert set(d.raw) == {"cache", "ram"} and len(d.omega) == 3
    assert d.omega[d.candidates.index(d.node_id)] == max(d.omega)
    assert len(d.omega_digest()) == 16


@settings(max_examples=40, deadline=None)
@given(cached=st.sets(st.integers(0, 11), max_size=12), full=st.sets(st.integers(0, 11), max_size=12),
       seed=st.integers(0, 2**32 - 1))
def test_cache_seeking_law(cached, full, seed):
    hs = hosts(12)
    for i in cached:
        hs[i].reported_cache = frozenset({"A"})
    for i in full:
        hs[i].vcpus_free = 0
    assume(len(full) < 12)
    d = schedule(req("A"), hs, SchedulerConfig.preset("cache"), rng_stream(seed, "tiebreak"))
    if cached - full:
        assert int(d.node_id[1:]) in cached - full


def test_cache_seeking_in_full_run():
    # whenever some candidate reports the image cached, the winner is one of them
    res = Simulation(Scenario.builtin("trace-80-cache-central")).run()
    reported = {}
    for d in res.decisions:
        cache_raw = dict(zip(d.candidates, d.raw["cache"]))
        if any(cache_raw.values()):
            assert cache_raw[d.node_id] == 1
        reported[d.request_id] = cache_raw[d.node_id]
    assert sum(reported.values()) > len(reported) / 2
