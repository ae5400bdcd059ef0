"""Latency, barrier, and utilization metrics collected from a run.

Percentiles use the nearest-rank method on the full sample set; nothing is
sampled or bucketed, so two runs over identical traffic report identical
numbers. A barrier's sync duration spans from the lessor entering BLOCKED to
the last lessee receiving its unsync, which is the full window in which some
instance is unavailable for that function.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

from .model import InstanceAddress

NS_PER_MS = 1e6


def percentile(values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile; values need not be pre-sorted."""
    if not values:
        return 0.0
    if not 0 < p <= 100:
        raise ValueError(f"percentile out of range: {p}")
    ordered = sorted(values)
    rank = math.ceil(p / 100.0 * len(ordered))
    return ordered[rank - 1]


@dataclass
class LatencyStats:
    count: int = 0
    mean_ms: float = 0.0
    p50_ms: float = 0.0
    p95_ms: float = 0.0
    p99_ms: float = 0.0
    max_ms: float = 0.0
    satisfaction_rate: float = 1.0
    slo_ms: Optional[float] = None
    throughput_hz: float = 0.0

    @staticmethod
    def from_samples(latencies_ns: Sequence[int], slo_ns: Optional[int],
                     horizon_ns: int) -> "LatencyStats":
        if not latencies_ns:
            return LatencyStats(slo_ms=None if slo_ns is None
                                else slo_ns / NS_PER_MS)
        ms = [v / NS_PER_MS for v in latencies_ns]
        sat = 1.0
        if slo_ns is not None:
            sat = sum(1 for v in latencies_ns if v <= slo_ns) / len(latencies_ns)
        return LatencyStats(
            count=len(ms),
            mean_ms=sum(ms) / len(ms),
            p50_ms=percentile(ms, 50),
            p95_ms=percentile(ms, 95),
            p99_ms=percentile(ms, 99),
            max_ms=max(ms),
            satisfaction_rate=sat,
            slo_ms=None if slo_ns is None else slo_ns / NS_PER_MS,
            throughput_hz=len(ms) / (horizon_ns / 1e9) if horizon_ns else 0.0,
        )


@dataclass
class BarrierStats:
    count: int = 0
    mean_ms: float = 0.0
    p95_ms: float = 0.0
    max_ms: float = 0.0
    mean_lessees: float = 0.0

    @staticmethod
    def from_samples(durations_ns: Sequence[int],
                     lessees: Sequence[int]) -> "BarrierStats":
        if not durations_ns:
            return BarrierStats()
        ms = [v / NS_PER_MS for v in durations_ns]
        return BarrierStats(
            count=len(ms),
            mean_ms=sum(ms) / len(ms),
            p95_ms=percentile(ms, 95),
            max_ms=max(ms),
            mean_lessees=sum(lessees) / len(lessees) if lessees else 0.0,
        )


@dataclass
class WorkerStats:
    worker_id: int
    busy_ms: float
    utilization: float


@dataclass
class MetricsReport:
    horizon_ms: float
    injected: int
    completed: int
    forwarded: int
    jobs: Dict[str, LatencyStats]
    barriers: Dict[str, BarrierStats]
    workers: List[WorkerStats]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "horizon_ms": self.horizon_ms,
            "injected": self.injected,
            "completed": self.completed,
            "forwarded": self.forwarded,
            "jobs": {j: vars(s) for j, s in self.jobs.items()},
            "barriers": {j: vars(s) for j, s in self.barriers.items()},
            "workers": [vars(w) for w in self.workers],
        }

    def write_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["section", "name", "metric", "value"])
            w.writerow(["run", "", "horizon_ms", self.horizon_ms])
            w.writerow(["run", "", "injected", self.injected])
            w.writerow(["run", "", "completed", self.completed])
            w.writerow(["run", "", "forwarded", self.forwarded])
            for job, s in sorted(self.jobs.items()):
                for k, v in vars(s).items():
                    w.writerow(["latency", job, k, v])
            for job, s in sorted(self.barriers.items()):
                for k, v in vars(s).items():
                    w.writerow(["barrier", job, k, v])
            for ws in self.workers:
                w.writerow(["worker", ws.worker_id, "busy_ms", ws.busy_ms])
                w.writerow(["worker", ws.worker_id, "utilization", ws.utilization])

    def lookup(self, metric: str, job: Optional[str] = None) -> float:
        """Resolve a metric name for run comparisons.

        Latency metrics (``p99_ms`` etc.) and ``sync_``-prefixed barrier
        metrics resolve within one job; run counters stand alone. With no
        job named, a single-job report resolves against that job.
        """
        if metric in ("injected", "completed", "forwarded", "horizon_ms"):
            return float(getattr(self, metric))
        if metric == "utilization_max":
            return max((w.utilization for w in self.workers), default=0.0)
        pool: Dict[str, Any]
        if metric.startswith("sync_"):
            pool, key = self.barriers, metric[len("sync_"):]
        else:
            pool, key = self.jobs, metric
        if job is None:
            if len(pool) != 1:
                raise KeyError(
                    f"metric {metric!r} needs --job with jobs {sorted(pool)}")
            job = next(iter(pool))
        if job not in pool:
            raise KeyError(f"unknown job {job!r}")
        stats = pool[job]
        if not hasattr(stats, key):
            raise KeyError(f"unknown metric {metric!r}")
        return float(getattr(stats, key))


class MetricsCollector:
    """Accumulates observations during a run; ``finish`` freezes a report."""

    def __init__(self) -> None:
        self.injected = 0
        self.forwarded = 0
        self._latencies: Dict[str, List[int]] = {}
        self._barrier_job: Dict[str, str] = {}
        self._barrier_start: Dict[str, int] = {}
        self._barrier_done: Dict[str, int] = {}
        self._barrier_unsync: Dict[str, int] = {}
        self._barrier_lessees: Dict[str, int] = {}

    def record_latency(self, job_id: str, injected_at: int, latency_ns: int) -> None:
        self._latencies.setdefault(job_id, []).append(latency_ns)

    def observe_event(self, now: int, addr: InstanceAddress, trace) -> None:
        event = trace.event
        bid = trace.barrier_id
        if not bid:
            return
        if event == "BLOCKED_ENTER" and addr.is_lessor:
            self._barrier_start.setdefault(bid, now)
            self._barrier_job.setdefault(bid, addr.job_id)
        elif event == "UNSYNC_RECV":
            prev = self._barrier_unsync.get(bid, 0)
            self._barrier_unsync[bid] = max(prev, now)
        elif event == "BARRIER_DONE" and addr.is_lessor:
            self._barrier_done.setdefault(bid, now)
            for token in trace.detail.split():
                if token.startswith("lessees="):
                    self._barrier_lessees[bid] = int(token.split("=", 1)[1])

    def finish(self, horizon_ns: int, slo_by_job: Dict[str, Optional[int]],
               workers) -> MetricsReport:
        jobs = {
            job: LatencyStats.from_samples(samples, slo_by_job.get(job),
                                           horizon_ns)
            for job, samples in sorted(self._latencies.items())
        }
        per_job_durations: Dict[str, List[int]] = {}
        per_job_lessees: Dict[str, List[int]] = {}
        for bid, start in self._barrier_start.items():
            done = self._barrier_done.get(bid)
            if done is None:
                continue  # barrier still in flight at horizon
            end = max(done, self._barrier_unsync.get(bid, done))
            job = self._barrier_job[bid]
            per_job_durations.setdefault(job, []).append(end - start)
            per_job_lessees.setdefault(job, []).append(
                self._barrier_lessees.get(bid, 0))
        barriers = {
            job: BarrierStats.from_samples(per_job_durations[job],
                                           per_job_lessees.get(job, []))
            for job in sorted(per_job_durations)
        }
        worker_stats = [
            WorkerStats(w.worker_id, w.busy_ns / NS_PER_MS,
                        w.busy_ns / horizon_ns if horizon_ns else 0.0)
            for w in workers
        ]
        completed = sum(len(v) for v in self._latencies.values())
        return MetricsReport(
            horizon_ms=horizon_ns / NS_PER_MS,
            injected=self.injected,
            completed=completed,
            forwarded=self.forwarded,
            jobs=jobs,
            barriers=barriers,
            workers=worker_stats,
        )
