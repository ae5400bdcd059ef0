"""Scenario files: one TOML document describes a complete simulated run.

A scenario names the cluster size, the scheduling strategy, the transport
delays, each job's operator pipeline, and the workload every source injects.
Validation is all-at-once: every offending field is reported with its path
in a single error instead of stopping at the first. ``run_scenario``
assembles the simulation, runs it to the horizon, and writes ``metrics.csv``
and ``summary.json`` (plus ``trace.tsv`` when tracing) into the output
directory. Identical (scenario, seed) pairs produce byte-identical outputs.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

try:
    import tomllib  # Python 3.11+
except ModuleNotFoundError:  # pragma: no cover - version-dependent import
    import tomli as tomllib

from .metrics import MetricsReport
from .model import FunctionAddress, Granularity
from .operators import FilterOperator, MapOperator
from .runtime import FunctionSpec, JobSpec, RuntimeConfig
from .sim import Simulation
from .state import registered_names
from .scheduling import STRATEGY_KINDS
from .tracing import Tracer
from .workload import (
    constant_rate,
    constant_value,
    pareto_burst,
    uniform_keys,
    uniform_values,
    zipf_keys,
)


class ScenarioError(Exception):
    """One or more scenario fields failed validation."""

    def __init__(self, errors: List[str]):
        super().__init__("\n".join(errors))
        self.errors = list(errors)


# Pipeline vocabulary: a file's operator kind names both the operator and,
# for windows, the aggregate it folds.
KIND_TABLE: Dict[str, Tuple[str, str]] = {
    "map": ("map", "sum"),
    "filter": ("filter", "sum"),
    "key_by": ("key_by", "sum"),
    "window_sum": ("window", "sum"),
    "window_max": ("window", "max"),
    "window_average": ("window", "average"),
    "window_median": ("window", "median"),
    "sink": ("sink", "sum"),
}

_FUNCTION_KEYS = {"name", "kind", "downstream", "service_us", "worker",
                  "prespawn_lessees", "state_extra_bytes", "holistic_cap",
                  "cf", "transform", "predicate", "buckets",
                  "result_size_bytes"}
_WORKLOAD_KEYS = {"source", "kind", "rate_hz", "alpha", "start_ms",
                  "watermark_every_ms", "values", "value", "value_lo",
                  "value_hi", "keys", "n_keys", "zipf_s"}
_JOB_KEYS = {"id", "slo_ms", "read_heavy", "sync", "function", "workload"}
_TOP_KEYS = {"name", "seed", "duration_ms", "verbose_trace", "cluster",
             "strategy", "transport", "job"}

WORKLOAD_KINDS = ("constant_rate", "pareto_burst")
VALUE_KINDS = ("one", "constant", "uniform")
KEY_KINDS = ("none", "uniform", "zipf")


@dataclass
class WorkloadSpec:
    source: str
    kind: str = "constant_rate"
    rate_hz: float = 1000.0
    alpha: float = 2.5
    start_ms: float = 0.0
    watermark_every_ms: float = 0.0
    values: str = "one"
    value: int = 1
    value_lo: int = 1
    value_hi: int = 100
    keys: str = "none"
    n_keys: int = 8
    zipf_s: float = 1.2


@dataclass
class JobScenario:
    job_id: str
    functions: Dict[str, FunctionSpec]
    workloads: List[WorkloadSpec]
    slo_ms: Optional[float] = None
    read_heavy: bool = False
    sync: Granularity = Granularity.SYNC_CHANNEL
    pins: Dict[str, int] = field(default_factory=dict)
    kinds: Dict[str, str] = field(default_factory=dict)

    def job_spec(self) -> JobSpec:
        # Chained barriers keep the job's granularity when an operator
        # re-emits the critical downstream; copies keep the scenario inert.
        functions = {}
        for name, spec in self.functions.items():
            params = dict(spec.operator_params)
            if spec.operator != "sink":
                params.setdefault("propagate", self.sync.value)
            functions[name] = replace(spec, operator_params=params)
        return JobSpec(job_id=self.job_id, functions=functions,
                       slo_ms=self.slo_ms, read_heavy=self.read_heavy,
                       sync=self.sync)


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 0
    duration_ms: float = 1000.0
    workers: int = 4
    strategy: str = "fifo"
    strategy_params: Dict[str, Any] = field(default_factory=dict)
    base_latency_us: float = 50.0
    jitter_us: float = 0.0
    bandwidth_mbps: float = 0.0
    forward_overhead_us: float = 20.0
    feedback_delay_us: float = 500.0
    verbose_trace: bool = False
    jobs: List[JobScenario] = field(default_factory=list)

    def canonical(self) -> Dict[str, Any]:
        """Defaults materialized, enum values flattened; feeds comparisons."""
        return {
            "name": self.name,
            "seed": self.seed,
            "duration_ms": self.duration_ms,
            "workers": self.workers,
            "strategy": {"name": self.strategy, **self.strategy_params},
            "transport": {
                "base_latency_us": self.base_latency_us,
                "jitter_us": self.jitter_us,
                "bandwidth_mbps": self.bandwidth_mbps,
                "forward_overhead_us": self.forward_overhead_us,
                "feedback_delay_us": self.feedback_delay_us,
            },
            "verbose_trace": self.verbose_trace,
            "jobs": [
                {
                    "id": job.job_id,
                    "slo_ms": job.slo_ms,
                    "read_heavy": job.read_heavy,
                    "sync": job.sync.value,
                    "functions": [
                        {
                            "name": f.name,
                            "kind": job.kinds[f.name],
                            "downstream": list(f.downstream),
                            "cf": f.cf,
                            "service_us": f.service_us,
                            "worker": job.pins.get(f.name),
                            "prespawn_lessees": f.prespawn_lessees,
                            "state_extra_bytes": f.state_extra_bytes,
                            "holistic_cap": f.holistic_cap,
                            "params": dict(sorted(f.operator_params.items())),
                        }
                        for f in job.functions.values()
                    ],
                    "workloads": [vars(w).copy() for w in job.workloads],
                }
                for job in self.jobs
            ],
        }


def _typed(table: Dict, key: str, kinds, default, path: str,
           errors: List[str]):
    """Fetch ``table[key]`` if it has one of the expected types."""
    if key not in table:
        return default
    v = table[key]
    if isinstance(v, bool) and bool not in (kinds if isinstance(kinds, tuple) else (kinds,)):
        errors.append(f"{path}.{key}: expected {kinds}, got a boolean")
        return default
    if not isinstance(v, kinds):
        name = getattr(kinds, "__name__", str(kinds))
        errors.append(f"{path}.{key}: expected {name}, got {type(v).__name__}")
        return default
    return v


def _check_keys(table: Dict, allowed: set, path: str, errors: List[str]) -> None:
    for k in sorted(set(table) - allowed):
        errors.append(f"{path}.{k}: unknown key")


def _parse_function(entry: Dict, path: str, errors: List[str],
                    workers: int) -> Tuple[Optional[FunctionSpec], str, Optional[int]]:
    _check_keys(entry, _FUNCTION_KEYS, path, errors)
    name = _typed(entry, "name", str, "", path, errors)
    if not name:
        errors.append(f"{path}.name: required")
    kind = _typed(entry, "kind", str, "map", path, errors)
    if kind not in KIND_TABLE:
        errors.append(f"{path}.kind: unknown operator kind {kind!r}; "
                      f"expected one of {sorted(KIND_TABLE)}")
        return None, kind, None
    operator, cf = KIND_TABLE[kind]
    if "cf" in entry:
        if kind != "sink":
            errors.append(f"{path}.cf: only sinks take an explicit aggregate "
                          f"(use window_* kinds)")
        cf = _typed(entry, "cf", str, cf, path, errors)
    if cf not in registered_names():
        errors.append(f"{path}.cf: unknown aggregate {cf!r}")
    downstream = _typed(entry, "downstream", list, [], path, errors)
    if not all(isinstance(d, str) for d in downstream):
        errors.append(f"{path}.downstream: entries must be function names")
        downstream = [d for d in downstream if isinstance(d, str)]

    params: Dict[str, Any] = {}
    if "transform" in entry:
        t = _typed(entry, "transform", str, "identity", path, errors)
        if operator != "map":
            errors.append(f"{path}.transform: only map functions transform")
        elif t not in MapOperator.TRANSFORMS:
            errors.append(f"{path}.transform: unknown transform {t!r}")
        else:
            params["transform"] = t
    if "predicate" in entry:
        p = _typed(entry, "predicate", str, "all", path, errors)
        if operator != "filter":
            errors.append(f"{path}.predicate: only filter functions test")
        elif p not in FilterOperator.PREDICATES:
            errors.append(f"{path}.predicate: unknown predicate {p!r}")
        else:
            params["predicate"] = p
    if "buckets" in entry:
        b = _typed(entry, "buckets", int, 8, path, errors)
        if operator != "key_by":
            errors.append(f"{path}.buckets: only key_by functions bucket")
        elif b < 1:
            errors.append(f"{path}.buckets: must be positive")
        else:
            params["buckets"] = b
    if "result_size_bytes" in entry:
        r = _typed(entry, "result_size_bytes", int, 64, path, errors)
        if operator != "window":
            errors.append(f"{path}.result_size_bytes: only windows emit results")
        elif r < 0:
            errors.append(f"{path}.result_size_bytes: must be non-negative")
        else:
            params["result_size_bytes"] = r

    service_us = _typed(entry, "service_us", (int, float), 50.0, path, errors)
    if service_us <= 0:
        errors.append(f"{path}.service_us: must be positive")
    prespawn = _typed(entry, "prespawn_lessees", int, 0, path, errors)
    if prespawn < 0:
        errors.append(f"{path}.prespawn_lessees: must be non-negative")
    extra = _typed(entry, "state_extra_bytes", int, 0, path, errors)
    if extra < 0:
        errors.append(f"{path}.state_extra_bytes: must be non-negative")
    cap = _typed(entry, "holistic_cap", int, 1_000_000, path, errors)
    if cap < 1:
        errors.append(f"{path}.holistic_cap: must be positive")

    pin = None
    if "worker" in entry:
        pin = _typed(entry, "worker", int, None, path, errors)
        if pin is not None and not 0 <= pin < workers:
            errors.append(f"{path}.worker: worker {pin} not in a cluster of "
                          f"{workers}")
            pin = None

    spec = FunctionSpec(name=name, operator=operator, operator_params=params,
                        cf=cf, downstream=tuple(downstream),
                        holistic_cap=cap, state_extra_bytes=extra,
                        service_us=float(service_us),
                        prespawn_lessees=prespawn)
    return spec, kind, pin


def _parse_workload(entry: Dict, path: str, errors: List[str]) -> WorkloadSpec:
    _check_keys(entry, _WORKLOAD_KEYS, path, errors)
    w = WorkloadSpec(source=_typed(entry, "source", str, "", path, errors))
    if not w.source:
        errors.append(f"{path}.source: required")
    w.kind = _typed(entry, "kind", str, w.kind, path, errors)
    if w.kind not in WORKLOAD_KINDS:
        errors.append(f"{path}.kind: unknown workload kind {w.kind!r}; "
                      f"expected one of {WORKLOAD_KINDS}")
    w.rate_hz = float(_typed(entry, "rate_hz", (int, float), w.rate_hz, path, errors))
    if w.rate_hz <= 0:
        errors.append(f"{path}.rate_hz: must be positive")
    w.alpha = float(_typed(entry, "alpha", (int, float), w.alpha, path, errors))
    if w.kind == "pareto_burst" and w.alpha <= 1.0:
        errors.append(f"{path}.alpha: must exceed 1 for a finite mean")
    w.start_ms = float(_typed(entry, "start_ms", (int, float), w.start_ms, path, errors))
    if w.start_ms < 0:
        errors.append(f"{path}.start_ms: must be non-negative")
    w.watermark_every_ms = float(_typed(entry, "watermark_every_ms",
                                        (int, float), 0.0, path, errors))
    if w.watermark_every_ms < 0:
        errors.append(f"{path}.watermark_every_ms: must be non-negative")
    w.values = _typed(entry, "values", str, w.values, path, errors)
    if w.values not in VALUE_KINDS:
        errors.append(f"{path}.values: unknown value sampler {w.values!r}; "
                      f"expected one of {VALUE_KINDS}")
    w.value = _typed(entry, "value", int, w.value, path, errors)
    w.value_lo = _typed(entry, "value_lo", int, w.value_lo, path, errors)
    w.value_hi = _typed(entry, "value_hi", int, w.value_hi, path, errors)
    if w.value_lo > w.value_hi:
        errors.append(f"{path}.value_lo: exceeds value_hi")
    w.keys = _typed(entry, "keys", str, w.keys, path, errors)
    if w.keys not in KEY_KINDS:
        errors.append(f"{path}.keys: unknown key sampler {w.keys!r}; "
                      f"expected one of {KEY_KINDS}")
    w.n_keys = _typed(entry, "n_keys", int, w.n_keys, path, errors)
    if w.n_keys < 1:
        errors.append(f"{path}.n_keys: must be positive")
    w.zipf_s = float(_typed(entry, "zipf_s", (int, float), w.zipf_s, path, errors))
    if w.zipf_s <= 0:
        errors.append(f"{path}.zipf_s: must be positive")
    return w


def _find_cycle(functions: Dict[str, FunctionSpec]) -> Optional[List[str]]:
    """First downstream cycle found, as the list of names along it."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {n: WHITE for n in functions}
    trail: List[str] = []

    def visit(node: str) -> Optional[List[str]]:
        color[node] = GRAY
        trail.append(node)
        for nxt in functions[node].downstream:
            if nxt not in functions:
                continue
            if color[nxt] is GRAY:
                return trail[trail.index(nxt):] + [nxt]
            if color[nxt] is WHITE:
                found = visit(nxt)
                if found:
                    return found
        color[node] = BLACK
        trail.pop()
        return None

    for name in functions:
        if color[name] is WHITE:
            found = visit(name)
            if found:
                return found
    return None


def _parse_job(entry: Dict, path: str, errors: List[str],
               workers: int) -> JobScenario:
    _check_keys(entry, _JOB_KEYS, path, errors)
    job_id = _typed(entry, "id", str, "", path, errors)
    if not job_id:
        errors.append(f"{path}.id: required")
    slo_ms = _typed(entry, "slo_ms", (int, float), None, path, errors)
    if slo_ms is not None and slo_ms <= 0:
        errors.append(f"{path}.slo_ms: must be positive")
    read_heavy = _typed(entry, "read_heavy", bool, False, path, errors)
    sync_name = _typed(entry, "sync", str, "SYNC_CHANNEL", path, errors)
    try:
        sync = Granularity(sync_name)
    except ValueError:
        errors.append(f"{path}.sync: unknown granularity {sync_name!r}")
        sync = Granularity.SYNC_CHANNEL

    functions: Dict[str, FunctionSpec] = {}
    kinds: Dict[str, str] = {}
    pins: Dict[str, int] = {}
    raw_fns = entry.get("function", [])
    if not isinstance(raw_fns, list) or not raw_fns:
        errors.append(f"{path}.function: at least one function required")
        raw_fns = []
    for i, fn_entry in enumerate(raw_fns):
        fpath = f"{path}.function[{i}]"
        if not isinstance(fn_entry, dict):
            errors.append(f"{fpath}: expected a table")
            continue
        spec, kind, pin = _parse_function(fn_entry, fpath, errors, workers)
        if spec is None or not spec.name:
            continue
        if spec.name in functions:
            errors.append(f"{fpath}.name: duplicate function {spec.name!r}")
            continue
        functions[spec.name] = spec
        kinds[spec.name] = kind
        if pin is not None:
            pins[spec.name] = pin
    for i, fn_entry in enumerate(raw_fns):
        if not isinstance(fn_entry, dict):
            continue
        for d in fn_entry.get("downstream", []):
            if isinstance(d, str) and d not in functions:
                errors.append(f"{path}.function[{i}].downstream: unknown "
                              f"function {d!r}")
    cycle = _find_cycle(functions)
    if cycle:
        errors.append(f"{path}: cyclic graph: {' -> '.join(cycle)}")

    fed = {d for spec in functions.values() for d in spec.downstream}
    sources = [n for n in functions if n not in fed]
    workloads: List[WorkloadSpec] = []
    seen_sources: set = set()
    raw_wls = entry.get("workload", [])
    if not isinstance(raw_wls, list):
        errors.append(f"{path}.workload: expected an array of tables")
        raw_wls = []
    for i, wl_entry in enumerate(raw_wls):
        wpath = f"{path}.workload[{i}]"
        if not isinstance(wl_entry, dict):
            errors.append(f"{wpath}: expected a table")
            continue
        w = _parse_workload(wl_entry, wpath, errors)
        if w.source and w.source not in functions:
            errors.append(f"{wpath}.source: unknown function {w.source!r}")
        elif w.source and w.source not in sources:
            errors.append(f"{wpath}.source: {w.source!r} is fed by other "
                          f"functions and cannot take injections")
        elif w.source in seen_sources:
            errors.append(f"{wpath}.source: duplicate workload for {w.source!r}")
        else:
            seen_sources.add(w.source)
            workloads.append(w)

    # A shared barrier blocks on a program from every feed, and programs
    # merge only when their epochs line up; unequal cadences would deadlock.
    if sync is Granularity.SYNC_ONE and len(sources) > 1:
        cadences = {w.watermark_every_ms for w in workloads}
        uncovered = set(sources) - {w.source for w in workloads}
        if uncovered or len(cadences) > 1:
            errors.append(f"{path}: SYNC_ONE needs every source injecting "
                          f"with one shared watermark cadence")

    return JobScenario(job_id=job_id, functions=functions,
                       workloads=workloads, slo_ms=slo_ms,
                       read_heavy=read_heavy, sync=sync, pins=pins,
                       kinds=kinds)


def load_scenario(source) -> Scenario:
    """Parse and validate a scenario from a dict, TOML text, or file path."""
    if isinstance(source, dict):
        doc = source
    elif isinstance(source, str) and "\n" in source:
        try:
            doc = tomllib.loads(source)
        except tomllib.TOMLDecodeError as e:
            raise ScenarioError([f"scenario: malformed TOML: {e}"]) from None
    else:
        path = os.fspath(source)
        if not os.path.exists(path):
            raise ScenarioError([f"scenario: file not found: {path}"])
        with open(path, "rb") as fh:
            try:
                doc = tomllib.load(fh)
            except tomllib.TOMLDecodeError as e:
                raise ScenarioError([f"{path}: malformed TOML: {e}"]) from None

    errors: List[str] = []
    _check_keys(doc, _TOP_KEYS, "scenario", errors)
    sc = Scenario()
    sc.name = _typed(doc, "name", str, "scenario", "scenario", errors)
    sc.seed = _typed(doc, "seed", int, 0, "scenario", errors)
    if sc.seed < 0:
        errors.append("scenario.seed: must be non-negative")
    sc.duration_ms = float(_typed(doc, "duration_ms", (int, float), 1000.0,
                                  "scenario", errors))
    if sc.duration_ms <= 0:
        errors.append("scenario.duration_ms: must be positive")
    sc.verbose_trace = _typed(doc, "verbose_trace", bool, False,
                              "scenario", errors)

    cluster = _typed(doc, "cluster", dict, {}, "scenario", errors)
    _check_keys(cluster, {"workers"}, "cluster", errors)
    sc.workers = _typed(cluster, "workers", int, 4, "cluster", errors)
    if sc.workers < 1:
        errors.append("cluster.workers: must be positive")

    strategy = _typed(doc, "strategy", dict, {}, "scenario", errors)
    sc.strategy = _typed(strategy, "name", str, "fifo", "strategy", errors)
    if sc.strategy not in STRATEGY_KINDS:
        errors.append(f"strategy.name: unknown strategy {sc.strategy!r}; "
                      f"expected one of {STRATEGY_KINDS}")
    sc.strategy_params = {k: v for k, v in strategy.items() if k != "name"}

    transport = _typed(doc, "transport", dict, {}, "scenario", errors)
    _check_keys(transport, {"base_latency_us", "jitter_us", "bandwidth_mbps",
                            "forward_overhead_us", "feedback_delay_us"},
                "transport", errors)
    for attr in ("base_latency_us", "jitter_us", "bandwidth_mbps",
                 "forward_overhead_us", "feedback_delay_us"):
        v = float(_typed(transport, attr, (int, float), getattr(sc, attr),
                         "transport", errors))
        if v < 0:
            errors.append(f"transport.{attr}: must be non-negative")
        else:
            setattr(sc, attr, v)

    raw_jobs = doc.get("job", [])
    if not isinstance(raw_jobs, list) or not raw_jobs:
        errors.append("scenario.job: at least one job required")
        raw_jobs = []
    seen_ids: set = set()
    for i, job_entry in enumerate(raw_jobs):
        jpath = f"job[{i}]"
        if not isinstance(job_entry, dict):
            errors.append(f"{jpath}: expected a table")
            continue
        job = _parse_job(job_entry, jpath, errors, sc.workers)
        if job.job_id in seen_ids:
            errors.append(f"{jpath}.id: duplicate job_id {job.job_id!r}")
            continue
        seen_ids.add(job.job_id)
        sc.jobs.append(job)

    if errors:
        raise ScenarioError(errors)
    return sc


# -- comparison ---------------------------------------------------------------

# Paths along which two scenarios may differ and still be comparable: the
# scheduling strategy, burst shape, pre-scaled lessee counts, state bulk,
# and run identity. Anything else is a structural difference.
_COMPARABLE = tuple(re.compile(p) for p in (
    r"^name$",
    r"^seed$",
    r"^strategy($|\.)",
    r"^jobs\[\d+\]\.workloads\[\d+\]\.alpha$",
    r"^jobs\[\d+\]\.functions\[\d+\]\.prespawn_lessees$",
    r"^jobs\[\d+\]\.functions\[\d+\]\.state_extra_bytes$",
))


def _flatten(value: Any, prefix: str, out: Dict[str, Any]) -> None:
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(v, f"{prefix}.{k}" if prefix else str(k), out)
    elif isinstance(value, list):
        for i, v in enumerate(value):
            _flatten(v, f"{prefix}[{i}]", out)
    else:
        out[prefix] = value


def comparison_conflicts(a: Scenario, b: Scenario) -> List[str]:
    """Paths where the scenarios differ outside the declared sweep dimensions."""
    flat_a: Dict[str, Any] = {}
    flat_b: Dict[str, Any] = {}
    _flatten(a.canonical(), "", flat_a)
    _flatten(b.canonical(), "", flat_b)
    conflicts = []
    for key in sorted(set(flat_a) | set(flat_b)):
        if flat_a.get(key, "<absent>") == flat_b.get(key, "<absent>"):
            continue
        if not any(p.match(key) for p in _COMPARABLE):
            conflicts.append(key)
    return conflicts


# -- assembly -----------------------------------------------------------------

def _build_stream(sim: Simulation, job: JobScenario, w: WorkloadSpec):
    label = f"{job.job_id}/{w.source}"
    values = None
    if w.values == "constant":
        values = constant_value(w.value)
    elif w.values == "uniform":
        values = uniform_values(sim.stream_rng(f"{label}/values"),
                                w.value_lo, w.value_hi)
    keys = None
    if w.keys == "uniform":
        keys = uniform_keys(sim.stream_rng(f"{label}/keys"), w.n_keys)
    elif w.keys == "zipf":
        keys = zipf_keys(sim.stream_rng(f"{label}/keys"), w.n_keys, w.zipf_s)
    start_ns = int(w.start_ms * 1e6)
    if w.kind == "pareto_burst":
        return pareto_burst(w.rate_hz, w.alpha, sim.horizon_ns,
                            sim.stream_rng(f"{label}/arrivals"),
                            values=values, keys=keys, start_ns=start_ns)
    return constant_rate(w.rate_hz, sim.horizon_ns, values=values, keys=keys,
                         start_ns=start_ns)


def build_simulation(sc: Scenario, seed: Optional[int] = None,
                     trace_path: Optional[str] = None,
                     collect_trace: bool = False) -> Simulation:
    config = RuntimeConfig(
        workers=sc.workers,
        strategy=sc.strategy,
        strategy_params=dict(sc.strategy_params),
        forward_overhead_us=sc.forward_overhead_us,
        feedback_delay_us=sc.feedback_delay_us,
    )
    tracer = Tracer(path=trace_path, collect=collect_trace)
    sim = Simulation(config, horizon_ms=sc.duration_ms,
                     seed=sc.seed if seed is None else seed,
                     base_latency_us=sc.base_latency_us,
                     jitter_us=sc.jitter_us,
                     bandwidth_mbps=sc.bandwidth_mbps,
                     tracer=tracer)
    for job in sc.jobs:
        for fn_name, wid in job.pins.items():
            sim.runtime.directory.pin_lessor(
                FunctionAddress(job.job_id, fn_name), wid)
        sim.add_job(job.job_spec())
        for w in job.workloads:
            sim.add_stream(job.job_id, w.source, _build_stream(sim, job, w))
            if w.watermark_every_ms > 0:
                sim.add_watermarks(job.job_id, w.source, w.watermark_every_ms)
    return sim


@dataclass
class RunResult:
    report: MetricsReport
    seed: int
    out_dir: Optional[str]
    files: Dict[str, str]


def run_scenario(sc: Scenario, out_dir: Optional[str] = None,
                 trace: bool = False, seed: Optional[int] = None) -> RunResult:
    """Run to the horizon; write metrics.csv / summary.json / trace.tsv."""
    used_seed = sc.seed if seed is None else seed
    trace_path = None
    files: Dict[str, str] = {}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        if trace or sc.verbose_trace:
            trace_path = os.path.join(out_dir, "trace.tsv")
    sim = build_simulation(sc, seed=used_seed, trace_path=trace_path)
    try:
        report = sim.run()
    finally:
        sim.tracer.close()
    if out_dir is not None:
        files["metrics"] = os.path.join(out_dir, "metrics.csv")
        report.write_csv(files["metrics"])
        files["summary"] = os.path.join(out_dir, "summary.json")
        summary = {"scenario": sc.name, "seed": used_seed}
        summary.update(report.to_dict())
        with open(files["summary"], "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if trace_path is not None:
            files["trace"] = trace_path
    return RunResult(report=report, seed=used_seed, out_dir=out_dir,
                     files=files)
