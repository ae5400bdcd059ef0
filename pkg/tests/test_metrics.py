"""Metrics assembly and the nearest-rank percentile.

Nearest-rank oracle, derived by hand: for n samples the p-th percentile is
the value at rank ceil(p/100 * n) (1-based) of the sorted list.
  [10, 20, 30]: p50 -> rank ceil(1.5) = 2 -> 20; p99 -> rank 3 -> 30
  1..100:       p50 -> rank 50 -> 50;  p95 -> 95;  p99 -> 99
"""

import json

import pytest

from leaseflow.metrics import (
    BarrierStats,
    LatencyStats,
    MetricsCollector,
    MetricsReport,
    WorkerStats,
    percentile,
)
from leaseflow.model import InstanceAddress
from leaseflow.protocol import Trace


class TestPercentile:
    def test_small_set_oracle(self):
        assert percentile([30, 10, 20], 50) == 20
        assert percentile([30, 10, 20], 99) == 30
        assert percentile([30, 10, 20], 1) == 10

    def test_hundred_values_oracle(self):
        values = list(range(1, 101))
        assert percentile(values, 50) == 50
        assert percentile(values, 95) == 95
        assert percentile(values, 99) == 99
        assert percentile(values, 100) == 100

    def test_single_sample(self):
        assert percentile([7], 50) == 7
        assert percentile([7], 99) == 7

    def test_empty_is_zero(self):
        assert percentile([], 99) == 0.0

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            percentile([1], 0)
        with pytest.raises(ValueError):
            percentile([1], 101)


class TestLatencyStats:
    def test_satisfaction_counts_at_or_under_slo(self):
        # 3 of 4 samples within a 2ms target.
        samples = [1_000_000, 2_000_000, 1_500_000, 9_000_000]
        s = LatencyStats.from_samples(samples, slo_ns=2_000_000,
                                      horizon_ns=int(1e9))
        assert s.count == 4
        assert s.satisfaction_rate == 0.75
        assert s.max_ms == 9.0
        assert s.throughput_hz == 4.0

    def test_no_slo_means_full_satisfaction(self):
        s = LatencyStats.from_samples([5_000_000], slo_ns=None,
                                      horizon_ns=int(1e9))
        assert s.satisfaction_rate == 1.0
        assert s.slo_ms is None

    def test_empty_samples(self):
        s = LatencyStats.from_samples([], slo_ns=1_000_000, horizon_ns=int(1e9))
        assert s.count == 0 and s.slo_ms == 1.0


class TestBarrierStats:
    def test_from_samples(self):
        s = BarrierStats.from_samples([1_000_000, 3_000_000], [1, 3])
        assert s.count == 2
        assert s.mean_ms == 2.0
        assert s.max_ms == 3.0
        assert s.mean_lessees == 2.0

    def test_empty(self):
        assert BarrierStats.from_samples([], []).count == 0


def _addr(fn, index=0):
    return InstanceAddress("job", fn, index, 0)


def _trace(event, barrier_id="", detail=""):
    return Trace(event=event, barrier_id=barrier_id, channel="", seq_id="",
                 detail=detail)


class TestCollector:
    def test_sync_duration_spans_block_to_last_unsync(self):
        c = MetricsCollector()
        lessor, lessee = _addr("f"), _addr("f", 1)
        c.observe_event(100, lessor, _trace("BLOCKED_ENTER", "b1"))
        c.observe_event(150, lessor, _trace("BARRIER_DONE", "b1", "lessees=2"))
        c.observe_event(170, lessee, _trace("UNSYNC_RECV", "b1"))
        c.observe_event(180, lessee, _trace("UNSYNC_RECV", "b1"))
        report = c.finish(1000, {"job": None}, workers=[])
        stats = report.barriers["job"]
        assert stats.count == 1
        assert stats.mean_ms == pytest.approx(80 / 1e6)
        assert stats.mean_lessees == 2.0

    def test_unfinished_barrier_excluded(self):
        c = MetricsCollector()
        c.observe_event(100, _addr("f"), _trace("BLOCKED_ENTER", "b1"))
        report = c.finish(1000, {"job": None}, workers=[])
        assert "job" not in report.barriers

    def test_lessee_events_do_not_open_barriers(self):
        c = MetricsCollector()
        c.observe_event(100, _addr("f", 1), _trace("BLOCKED_ENTER", "b1"))
        assert "b1" not in c._barrier_start


def _report():
    return MetricsReport(
        horizon_ms=100.0, injected=10, completed=8, forwarded=2,
        jobs={"jobA": LatencyStats(count=8, p99_ms=4.5, satisfaction_rate=0.9)},
        barriers={"jobA": BarrierStats(count=2, mean_ms=1.5)},
        workers=[WorkerStats(0, busy_ms=50.0, utilization=0.5),
                 WorkerStats(1, busy_ms=80.0, utilization=0.8)])


class TestReport:
    def test_lookup_resolves_single_job_implicitly(self):
        r = _report()
        assert r.lookup("p99_ms") == 4.5
        assert r.lookup("sync_mean_ms") == 1.5
        assert r.lookup("satisfaction_rate", job="jobA") == 0.9
        assert r.lookup("forwarded") == 2.0
        assert r.lookup("utilization_max") == 0.8

    def test_lookup_rejects_unknowns(self):
        r = _report()
        with pytest.raises(KeyError):
            r.lookup("p99_ms", job="nope")
        with pytest.raises(KeyError):
            r.lookup("speedup")
        r.jobs["jobB"] = LatencyStats()
        with pytest.raises(KeyError):
            r.lookup("p99_ms")  # ambiguous without --job

    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "metrics.json"
        _report().write_json(str(path))
        data = json.loads(path.read_text())
        assert data["jobs"]["jobA"]["p99_ms"] == 4.5
        assert data["forwarded"] == 2

    def test_csv_has_flat_rows(self, tmp_path):
        path = tmp_path / "metrics.csv"
        _report().write_csv(str(path))
        text = path.read_text()
        assert "latency,jobA,p99_ms,4.5" in text
        assert "worker,1,utilization,0.8" in text
