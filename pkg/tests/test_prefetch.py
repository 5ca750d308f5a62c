import pytest

from vmdeploy import Scenario
from vmdeploy.kernel import Engine, to_us
from vmdeploy.model import GB, Catalog, ComputeNode, ImageSpec
from vmdeploy.network import FlowNetwork, Topology
from vmdeploy.prefetch import (PrefetchPlan, PrefetchPolicy, build_plan, execute_plan,
                               load_popularity_seed, rank_images_by_popularity)
from vmdeploy.simulation import Simulation
from vmdeploy.transfer import TransferManager, TransferProtocol


def catalog(counts, size=5 * GB):
    cat = Catalog()
    for iid, c in counts.items():
        cat.register(ImageSpec(iid, size, popularity_count=c))
    return cat


def nodes(n, **kw):
    return [ComputeNode(f"n{i:02d}", **kw) for i in range(n)]


def test_rank_examples():
    assert rank_images_by_popularity(catalog({"A": 5, "B": 9, "C": 1})) == ["B", "A", "C"]
    assert rank_images_by_popularity(catalog({"C": 0, "A": 0, "B": 0})) == ["A", "B", "C"]
    assert rank_images_by_popularity(catalog({"X": 3})) == ["X"]


def test_full_predeploy_cross_product():
    plan = build_plan(PrefetchPolicy("full-predeploy"), catalog({"A": 0, "B": 0}), nodes(3))
    assert len(plan) == 6
    assert len(set(plan.placements)) == 6


def test_top1_half_of_24_nodes():
    ns = nodes(24)
    for i, n in enumerate(ns):
        n.disk_free -= i * GB  # n00 has the most free disk
    plan = build_plan(PrefetchPolicy("top-k-popularity", k=1, fraction=0.5),
                      catalog({"A": 2, "B": 7}), ns)
    assert len(plan) == 12
    assert {img for img, _ in plan.placements} == {"B"}
    assert {n for _, n in plan.placements} == {f"n{i:02d}" for i in range(12)}


def test_cached_everywhere_gives_empty_plan():
    ns = nodes(4)
    for n in ns:
        n.cache["A"] = 0
    assert len(build_plan(PrefetchPolicy("full-predeploy"), catalog({"A": 1}), ns)) == 0


def test_plan_skips_in_flight_pairs():
    ns = nodes(2)
    ns[0].inflight["A"] = object()
    plan = build_plan(PrefetchPolicy("full-predeploy"), catalog({"A": 1}), ns)
    assert plan.placements == [("A", "n01")]


def test_insufficient_disk_drops_placement(caplog):
    ns = nodes(2)
    ns[1].disk_free = GB
    plan = build_plan(PrefetchPolicy("full-predeploy"), catalog({"A": 1}), ns)
    assert plan.placements == [("A", "n00")]
    assert plan.dropped == [("A", "n01")]
    assert "dropping A -> n01" in caplog.text


def test_policy_validation():
    with pytest.raises(ValueError):
        PrefetchPolicy("top-k-popularity", k=0)
    with pytest.raises(ValueError):
        PrefetchPolicy("full-predeploy", fraction=0)
    with pytest.raises(ValueError):
        build_plan(PrefetchPolicy("none"), catalog({"A": 1}), nodes(1))


def test_popularity_seed_file(tmp_path):
    cat = catalog({"A": 1, "B": 0})
    p = tmp_path / "pop.csv"
    p.write_text("image_id,count\nA,2\nB,10\n")
    load_popularity_seed(p, cat)
    assert rank_images_by_popularity(cat) == ["B", "A"]


def _manager(n_nodes, images):
    eng = Engine()
    cat = Catalog()
    for iid in images:
        cat.register(ImageSpec(iid, 5 * GB))
    ns = {f"n{i:02d}": ComputeNode(f"n{i:02d}") for i in range(n_nodes)}
    net = FlowNetwork(eng, Topology.testbed(ns, cat.endpoint), record_samples=True)
    return eng, net, TransferManager(eng, net, cat, ns, TransferProtocol("central"))


def test_empty_plan_starts_nothing():
    eng, net, tm = _manager(2, ["A"])
    assert execute_plan(PrefetchPlan(), tm) == []
    assert net.flows_started == 0


def test_executed_plan_caches_every_pair():
    eng, net, tm = _manager(3, ["A", "B"])
    plan = build_plan(PrefetchPolicy("full-predeploy"), tm.catalog, list(tm.nodes.values()))
    tickets = execute_plan(plan, tm)
    eng.run_until()
    assert all(t.reason == "prefetch" and t.completed_at is not None for t in tickets)
    for image_id, node_id in plan.placements:
        assert image_id in tm.nodes[node_id].cache


def test_prefetch_contends_with_demand():
    eng, net, tm = _manager(4, ["A", "B"])
    demand = tm.ensure_image("n00", "A")
    eng.run_until()
    alone = demand.completed_at

    eng, net, tm = _manager(4, ["A", "B"])
    plan = build_plan(PrefetchPolicy("full-predeploy"), tm.catalog, list(tm.nodes.values())[1:])
    execute_plan(plan, tm)
    demand = tm.ensure_image("n00", "A")
    eng.run_until()
    assert alone == to_us(40)
    assert demand.completed_at > 2 * alone  # seven flows share the catalog uplink
    cap = net.topology.capacity
    assert all(rate <= cap[ch] for _, ch, rate in net.samples)


def _predeployed_batch(protocol):
    # 8 x 1 GB images onto 24 nodes take 1536 s over the catalog link; requests come after
    return Scenario.builtin("table1-8x24-central").replace(**{
        "images.size_gb": 1, "protocol.kind": protocol,
        "prefetch.kind": "full-predeploy", "workload.start_s": 2000.0})


def test_prefetch_then_batch_needs_no_downloads():
    res = Simulation(_predeployed_batch("central")).run()
    boots = [r for r in res.records if r.kind == "vm_boot"]
    assert len(boots) == 192
    assert all(r.values["download_s"] == 0 for r in boots)
    assert {t.reason for t in res.fetches} == {"prefetch"}


def test_predeploy_matches_shared_storage():
    base = Scenario.builtin("trace-80-nocache-central").replace(**{
        "images.size_gb": 1, "workload.start_s": 1000.0})
    pre = Simulation(base.replace(**{"prefetch.kind": "full-predeploy"})).run()
    shared = Simulation(base.replace(**{"protocol.kind": "shared"})).run()

    def phases(res):
        return {vm.request.request_id: [(p, e - s) for p, s, e in vm.phase_timeline] for vm in res.vms}

    assert phases(pre) == phases(shared)
    assert [vm.boot_time for vm in pre.vms] == [vm.boot_time for vm in shared.vms]
