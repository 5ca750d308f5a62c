import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vmdeploy.kernel import rng_stream, to_us
from vmdeploy.model import Flavor, VmRequest
from vmdeploy.workload import (TABLE1_ROWS, BatchSpec, Trace, TraceFormatError, TraceSpec,
                               generate_batch, generate_poisson_trace, generate_zipf_popularity,
                               load_trace, save_trace, table1_row, zipf_pmf)


def poisson(rate, duration, pool=("a", "b", "c", "d"), law="uniform", seed=1, **kw):
    spec = TraceSpec(rate, duration, list(pool), law, **kw)
    return generate_poisson_trace(spec, rng_stream(seed, "arrivals"), rng_stream(seed, "images"))


# -- batches ---------------------------------------------------------------------

def test_row_8x24():
    trace = generate_batch(table1_row("8x24"))
    assert len(trace) == 192
    assert len({r.image_id for r in trace}) == 8
    assert all(r.arrival_time == 0 for r in trace)


def test_row_1x192():
    trace = generate_batch(table1_row("1x192"))
    assert len(trace) == 192 and {r.image_id for r in trace} == {"img0"}


@pytest.mark.parametrize("row", TABLE1_ROWS)
def test_table_rows_total_192(row):
    spec = table1_row(row)
    n_images, per_image = map(int, row.split("x"))
    assert spec.total == 192 == n_images * per_image
    assert spec.per_host_cap == 8
    groups = {}
    for r in generate_batch(spec):
        groups.setdefault(r.group_id, set()).add(r.image_id)
    assert len(groups) == n_images and all(len(v) == 1 for v in groups.values())


def test_empty_batch():
    assert len(generate_batch(BatchSpec([]))) == 0


def test_bad_row_name():
    with pytest.raises(ValueError):
        table1_row("eight")


# -- Poisson traces --------------------------------------------------------------

def test_mean_gap_at_80_per_hour():
    trace = poisson(80, 45 * 11_000)
    times = np.array([r.arrival_time for r in trace][:10_000]) / 1e6
    assert len(times) == 10_000
    gaps = np.diff(np.concatenate([[0.0], times]))
    assert abs(gaps.mean() - 45.0) <= 0.05 * 45.0


def test_exponential_gap_distance():
    trace = poisson(80, 45 * 11_000, seed=2)
    times = np.array([r.arrival_time for r in trace][:10_000]) / 1e6
    gaps = np.sort(np.diff(np.concatenate([[0.0], times])))
    n = len(gaps)
    cdf = 1 - np.exp(-gaps / 45.0)
    ks = max(np.max(np.arange(1, n + 1) / n - cdf), np.max(cdf - np.arange(n) / n))
    assert ks < 0.02  # 5% critical value at n=1e4 is about 0.0136


def test_uniform_pool_of_four():
    trace = poisson(80, 45 * 11_000, seed=3)
    counts = {}
    for r in trace:
        counts[r.image_id] = counts.get(r.image_id, 0) + 1
    n = len(trace)
    sigma = np.sqrt(n * 0.25 * 0.75)
    assert set(counts) == {"a", "b", "c", "d"}
    assert all(abs(c - n / 4) <= 4 * sigma for c in counts.values())


def test_count_at_100_per_hour():
    counts = np.array([len(poisson(100, 3600, seed=s)) for s in range(200)])
    # a Poisson(100) count has standard deviation 10
    assert np.all(np.abs(counts - 100) <= 5 * 10)
    assert abs(counts.mean() - 100) <= 3 * 10 / np.sqrt(len(counts))


def test_trace_deterministic():
    assert poisson(80, 3600, seed=9) == poisson(80, 3600, seed=9)
    assert poisson(80, 3600, seed=9) != poisson(80, 3600, seed=10)


def test_trace_spec_validation():
    with pytest.raises(ValueError):
        TraceSpec(0, 3600, ["a"])
    with pytest.raises(ValueError):
        TraceSpec(80, 3600, [])
    with pytest.raises(ValueError):
        TraceSpec(80, 3600, ["a"], "pareto")


# -- Zipf ------------------------------------------------------------------------

def test_zipf_s0_is_uniform():
    assert np.allclose(zipf_pmf(4, 0.0), 0.25)
    draws = generate_zipf_popularity(4, 0.0, rng_stream(1, "images"), 10_000)
    freq = np.bincount(draws, minlength=4) / 10_000
    assert np.all(np.abs(freq - 0.25) < 0.02)


def test_zipf_s1_k10_rank_frequency():
    draws = generate_zipf_popularity(10, 1.0, rng_stream(1, "images"), 10_000)
    freq = np.bincount(draws, minlength=10) / 10_000
    harmonic = sum(1 / r for r in range(1, 11))
    expected = np.array([1 / (r * harmonic) for r in range(1, 11)])
    assert np.all(np.abs(freq - expected) <= 0.10 * expected)


def test_zipf_single_image():
    assert set(generate_zipf_popularity(1, 1.3, rng_stream(1, "images"), 100).tolist()) == {0}


def test_zipf_rejects_bad_parameters():
    with pytest.raises(ValueError):
        generate_zipf_popularity(0, 1.0, rng_stream(1, "x"), 5)
    with pytest.raises(ValueError):
        generate_zipf_popularity(3, -1.0, rng_stream(1, "x"), 5)


def test_zipf_trace_favors_first_image():
    trace = poisson(100, 3600 * 20, pool=[f"i{k}" for k in range(5)], law="zipf", zipf_s=1.2)
    counts = [sum(r.image_id == f"i{k}" for r in trace) for k in range(5)]
    assert counts[0] == max(counts)


# -- trace files -----------------------------------------------------------------

def test_round_trip(tmp_path):
    trace = poisson(80, 3600, seed=4)
    save_trace(trace, tmp_path / "t.csv")
    assert load_trace(tmp_path / "t.csv") == trace


@settings(max_examples=40)
@given(times=st.lists(st.integers(0, 10**12), max_size=20),
       flavor=st.builds(Flavor, st.integers(1, 64), st.integers(1, 10**12), st.integers(1, 10**13),
                        st.integers(0, 10**13)))
def test_round_trip_property(tmp_path_factory, times, flavor):
    trace = Trace([VmRequest(i, t, f"img{i % 3}", flavor, "g") for i, t in enumerate(sorted(times))])
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    save_trace(trace, path)
    assert load_trace(path) == trace


HEADER = "arrival_seconds,image_id,vcpus,ram_bytes,root_bytes,ephemeral_bytes,group_id\n"


def test_negative_time_reports_line(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text(HEADER + "0.5,a,1,2,3,0,g\n-1,a,1,2,3,0,g\n")
    with pytest.raises(TraceFormatError, match=r"t\.csv:3"):
        load_trace(p)


def test_out_of_order_rejected(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text(HEADER + "5,a,1,2,3,0,g\n4,a,1,2,3,0,g\n")
    with pytest.raises(TraceFormatError, match=":3: arrivals out of order"):
        load_trace(p)


def test_missing_header_rejected(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("0,a,1,2,3,0,g\n")
    with pytest.raises(TraceFormatError, match=":1:"):
        load_trace(p)


def test_malformed_field(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text(HEADER + "1,a,one,2,3,0,g\n")
    with pytest.raises(TraceFormatError, match=":2:"):
        load_trace(p)


def test_sub_microsecond_time_rejected(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text(HEADER + "1.0000001,a,1,2,3,0,g\n")
    with pytest.raises(TraceFormatError):
        load_trace(p)


def test_trace_object_rejects_disorder():
    with pytest.raises(ValueError):
        Trace([VmRequest(0, to_us(2), "a"), VmRequest(1, to_us(1), "a")])
