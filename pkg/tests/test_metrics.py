import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedcache.config import Config, default_config_text
from fedcache.core import MB, CostParams, make_request
from fedcache.metrics import (LatencyBreakdown, RequestRow, RunReport, cost_of, emit_report,
                              footprint_tailored, footprint_untailored, latency_baseline_cache,
                              latency_baseline_objstore, latency_unified, load_report, request_cost)
from fedcache.policies import HitStats
from fedcache.traces import JobSpec

REQ = make_request("r", "Inference", 0)
MODEL = int(84.5 * MB)


def test_miss_latency_example():
    cost = CostParams(bandwidth_gbps=1, rtt_s=0.05)
    lat = latency_unified(REQ, False, MODEL, cost, 0.0)
    # 0.05 s round trip + 84.5e6 * 8 bits / 1e9 bit/s
    assert lat.total_s == pytest.approx(0.726)


def test_hit_latency_ignores_size():
    cost = CostParams()
    assert latency_unified(REQ, True, MODEL, cost, 0.6).total_s == pytest.approx(cost.rtt_s + 0.6)


def test_separated_baseline_by_hand():
    cost = CostParams()
    lat = latency_baseline_objstore(REQ, MODEL, 2, cost, 1.0)
    by_hand = 2 * MODEL * 8 / 0.08e9 + 1e6 * 8 / 0.08e9 + 2 * 0.05
    assert lat.comm_s == pytest.approx(by_hand) and lat.compute_s == 1.0


@given(st.integers(1, 10**9), st.integers(1, 10**9), st.integers(1, 50), st.floats(0, 10))
def test_baselines_monotone_in_size_and_count(a, b, n, compute):
    cost = CostParams()
    lo, hi = sorted((a, b))
    for fn in (latency_baseline_objstore, latency_baseline_cache):
        assert fn(REQ, lo, n, cost, compute).total_s <= fn(REQ, hi, n, cost, compute).total_s
        assert fn(REQ, lo, n, cost, compute).total_s <= fn(REQ, lo, n + 1, cost, compute).total_s
    # a unified hit is never slower than either separated baseline
    assert latency_unified(REQ, True, lo, cost, compute).total_s < latency_baseline_cache(REQ, lo, n, cost, compute).total_s


def test_negative_latency_rejected():
    with pytest.raises(ValueError):
        LatencyBreakdown(-1.0, 0.0)


def test_footprint_untailored_is_a_product():
    spec = JobSpec(pool_size=1000, per_round=1000, rounds=1000, model_size_bytes=MODEL)
    total, fns = footprint_untailored(spec, 8 * 2**30)
    assert total == 1000 * 1000 * MODEL
    assert fns == math.ceil(total / (8 * 2**30))
    assert footprint_untailored(JobSpec(rounds=0)) == (0, 0)


def test_footprint_tailored_is_a_few_rounds():
    spec = JobSpec(pool_size=20, per_round=4, rounds=8, model_size_bytes=1000, vector_len=4)
    nbytes, fns = footprint_tailored(spec, "p2")
    assert 4 * 1000 <= nbytes <= 3 * 4 * 1000 and fns >= 1


def test_request_cost_modes():
    cost = CostParams()
    row = RequestRow("r", "Inference", "p2", False, 1.0, 2.0, bytes_fetched=10**9, n_blobs=2)
    unified = request_cost(row, cost, "unified", fn_memory_gb=10.0)
    assert unified == pytest.approx(cost.fn_compute_per_gb_s * 10 * 3 + 2 * cost.objstore_get_per_req)
    obj = request_cost(row, cost, "objstore")
    assert obj == pytest.approx(0.23 * 3 / 3600 + 0.09 + 2 * 4e-7 + 5e-6)
    assert request_cost(row, cost, "cache") == pytest.approx(0.23 * 3 / 3600 + 0.09)
    with pytest.raises(ValueError):
        request_cost(row, cost, "disk")


def test_cost_of_fixed_charges():
    cost = CostParams()
    rows = [RequestRow("a", "Inference", "x", True, 0, 0, cost=0.5), RequestRow("b", "Inference", "x", True, 0, 0, cost=0.25)]
    month = 30 * 24 * 3600
    assert cost_of(rows, cost, "unified", duration_s=month, functions=4) == pytest.approx(
        {"per_request": 0.75, "fixed": 4 * 0.0087, "total": 0.75 + 4 * 0.0087})
    assert cost_of(rows, cost, "cache", duration_s=3600)["fixed"] == pytest.approx(0.068)
    assert cost_of(rows, cost, "objstore", duration_s=3600)["fixed"] == 0.0


def test_report_round_trip_is_exact(tmp_path):
    rows = [RequestRow(f"r{i}", "Eval", "p2", i % 2 == 0, 0.1 * i, 1.8, 0.0, 0.1 * i + 1.8, 1e-7 * i, i, 1, i / 3)
            for i in range(20)]
    report = RunReport(rows, {"p2": HitStats(10, 10)}, 12345, 3, {"note": "x"})
    emit_report(report, tmp_path / "run")
    back = load_report(tmp_path / "run.csv")
    assert back.rows == rows
    assert back.hit_stats == report.hit_stats
    assert (back.footprint_bytes, back.function_count, back.info) == (12345, 3, {"note": "x"})
    assert back.aggregates() == report.aggregates()


def test_aggregates_percentiles():
    rows = [RequestRow(str(i), "Eval", "p", True, 0.0, float(i), total_s=float(i)) for i in range(1, 101)]
    agg = RunReport(rows).aggregates()
    assert agg["p50_s"] == pytest.approx(50.5) and agg["p99_s"] == pytest.approx(99.01)
    assert RunReport().aggregates()["p50_s"] == 0.0


def test_default_toml_matches_defaults():
    assert Config.from_toml(default_config_text()) == Config()
