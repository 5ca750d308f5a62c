import random

import numpy as np
import pytest

from oracles import trapezoid
from vmdeploy import Scenario
from vmdeploy.metrics import (MetricRecord, RunSummary, export, export_phase_timeline, kde,
                              load_records, silverman_bandwidth, summarize)
from vmdeploy.simulation import Simulation


def boot(rid, arrival, ready, group="g0", state="active"):
    return MetricRecord("vm_boot", ready, f"vm{rid}", {
        "request_id": rid, "group_id": group, "image_id": "A", "node_id": "n0", "state": state,
        "arrival": arrival, "ready": ready if state == "active" else None,
        "boot_time": ready - arrival if state == "active" else None})


def test_first_and_all_ready():
    s = summarize([boot(0, 0.0, 10.0), boot(1, 0.0, 30.0)])
    g = s.groups["g0"]
    assert (g.first_ready, g.all_ready) == (10.0, 30.0)
    assert s.makespan == 30.0 and s.boot_mean == 20.0


def test_group_makespan_counts_from_first_arrival():
    s = summarize([boot(0, 5.0, 12.0, "a"), boot(1, 7.0, 20.0, "a"), boot(2, 0.0, 3.0, "b")])
    assert s.groups["a"].all_ready == 15.0 and s.groups["a"].first_ready == 7.0
    assert s.groups["b"].all_ready == 3.0


def test_failed_vms_do_not_count_as_ready():
    s = summarize([boot(0, 0.0, 10.0), boot(1, 0.0, 0.0, state="failed:no-valid-host")])
    assert s.vms == 2 and s.active == 1 and s.failed == 1
    assert s.groups["g0"].all_ready == 10.0


def test_empty_run():
    s = summarize([])
    assert s.vms == 0 and s.boot_mean is None and s.makespan is None and s.groups == {}
    assert s.to_dict()["makespan"] is None


def test_warm_batch_under_45s():
    s = Simulation(Scenario.builtin("warm-8x24")).run().summary
    assert s.vms == s.active == 192
    assert s.makespan < 45.0
    for g in s.groups.values():
        assert g.first_ready <= g.all_ready


def test_summary_ignores_record_order():
    recs = Simulation(Scenario.builtin("trace-80-cache-swarm")).run().records
    shuffled = list(recs)
    random.Random(0).shuffle(shuffled)
    assert summarize(shuffled) == summarize(recs)


def test_link_samples_within_capacity():
    sc = Scenario.builtin("table1-2x96-swarm").replace(**{"metrics.link_samples": True})
    recs = Simulation(sc).run().records
    samples = [r for r in recs if r.kind == "link_sample"]
    assert samples
    assert all(0 <= r.values["rate_bps"] <= r.values["capacity_bps"] for r in samples)


def test_byte_accounting_closure_central():
    res = Simulation(Scenario.builtin("trace-100-nocache-central")).run()
    delivered = {}
    for node_id in res.nodes:
        delivered[node_id] = res.network.bytes_on(f"nic:{node_id}:down")
    total_by_image = {i: res.catalog[i].size_bytes * n for i, n in res.summary.cold_fetches.items()}
    assert sum(delivered.values()) == sum(total_by_image.values())
    assert res.summary.catalog_egress_bytes == sum(total_by_image.values())


# -- density estimate -----------------------------------------------------------

def test_kde_normalized_gaussian_sample():
    x = np.random.default_rng(0).normal(30, 5, 200)
    grid, dens = kde(x)
    assert len(grid) == 512
    assert abs(trapezoid(dens, grid) - 1) < 1e-3


def test_kde_normalized_on_boot_times():
    # mostly identical values with a long tail: the hardest case for the grid span
    res = Simulation(Scenario.builtin("trace-80-cache-central")).run()
    times = [vm.boot_time / 1e6 for vm in res.vms if vm.state == "active"]
    grid, dens = kde(times)
    assert abs(trapezoid(dens, grid) - 1) < 1e-3


def test_kde_identical_samples_rejected():
    with pytest.raises(ValueError):
        kde([8.0] * 10)
    with pytest.raises(ValueError):
        kde([1.0])


def test_kde_bimodal():
    rng = np.random.default_rng(1)
    x = np.concatenate([rng.normal(10, 1, 300), rng.normal(60, 1, 300)])
    grid, dens = kde(x)
    peaks = [i for i in range(1, len(dens) - 1) if dens[i] > dens[i - 1] and dens[i] > dens[i + 1]]
    assert len(peaks) == 2
    assert abs(grid[peaks[0]] - 10) < 2 and abs(grid[peaks[1]] - 60) < 2


def test_silverman_reference_value():
    x = np.arange(1.0, 11.0)
    std = np.std(x, ddof=1)
    iqr = np.percentile(x, 75) - np.percentile(x, 25)
    assert silverman_bandwidth(x) == pytest.approx(0.9 * min(std, iqr / 1.34) * 10 ** -0.2)


def test_kde_explicit_bandwidth():
    grid, dens = kde([0.0, 1.0], bandwidth=0.5)
    assert grid[0] == pytest.approx(-2.0) and grid[-1] == pytest.approx(3.0)
    with pytest.raises(ValueError):
        kde([0.0, 1.0], bandwidth=0.0)


# -- export ---------------------------------------------------------------------

@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_export_round_trip(tmp_path, fmt, small_scenario):
    recs = Simulation(small_scenario).run().records
    path = tmp_path / f"r.{fmt}"
    export(recs, path, fmt)
    back = load_records(path, fmt)
    assert [(r.kind, r.time, r.subject) for r in back] == [(r.kind, r.time, r.subject) for r in recs]
    for a, b in zip(back, recs):
        for key, value in b.values.items():
            assert a.values[key] == value
    assert summarize(back) == summarize(recs)


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_same_seed_same_files(tmp_path, fmt, small_scenario):
    for name in ("a", "b"):
        res = Simulation(small_scenario).run()
        export(res.records, tmp_path / f"{name}.{fmt}", fmt)
        export(res.summary, tmp_path / f"{name}_summary.{fmt}", fmt)
        export_phase_timeline(res.vms, tmp_path / f"{name}_phases.csv")
    for stem in ("{}.%s" % fmt, "{}_summary.%s" % fmt, "{}_phases.csv"):
        assert (tmp_path / stem.format("a")).read_bytes() == (tmp_path / stem.format("b")).read_bytes()


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        export([], tmp_path / "missing" / "r.csv")
    with pytest.raises(OSError):
        export(RunSummary(), tmp_path / "missing" / "s.json", "json")


def test_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        export([], tmp_path / "r.xml", "xml")


def test_unknown_record_kind():
    with pytest.raises(ValueError):
        MetricRecord("cpu", 0.0, "x")
