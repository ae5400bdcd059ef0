"""Scenario parsing, validation, assembly, and run outputs.

Hand-derived oracles used below:

- scenarios/minimal.toml injects at 500 Hz for 200 ms starting at t=0, so
  exactly 100 messages arrive (t = 0, 2, ..., 198 ms). Watermarks tick at
  50, 100, 150 ms (200 is not strictly before the horizon), so the window
  consolidates three times and the sink completes three results. Each
  watermark barriers the window and, chained, the sink: six barriers total.
- with no jitter and a constant rate the transport rng is never consulted,
  so two seeds give identical traces; Pareto arrivals draw from the seeded
  stream rng, so different seeds must diverge.
"""

import json
import os

import pytest

from leaseflow.model import FunctionAddress
from leaseflow.scenario import (
    Scenario,
    ScenarioError,
    build_simulation,
    comparison_conflicts,
    load_scenario,
    run_scenario,
)
from leaseflow.tracing import audit_trace, read_trace

SCENARIOS = "scenarios"


def minimal_doc():
    return {
        "name": "unit",
        "seed": 3,
        "duration_ms": 100.0,
        "cluster": {"workers": 2},
        "strategy": {"name": "fifo"},
        "job": [{
            "id": "q",
            "slo_ms": 20.0,
            "function": [
                {"name": "src", "kind": "map", "downstream": ["agg"],
                 "service_us": 20.0},
                {"name": "agg", "kind": "window_sum", "downstream": ["out"],
                 "service_us": 40.0},
                {"name": "out", "kind": "sink", "service_us": 10.0},
            ],
            "workload": [
                {"source": "src", "kind": "constant_rate", "rate_hz": 500.0,
                 "watermark_every_ms": 25.0},
            ],
        }],
    }


class TestLoadValidation:
    def test_committed_files_load(self):
        for name in ("minimal", "calibration", "two_job_pareto", "zipf_hotkey"):
            sc = load_scenario(os.path.join(SCENARIOS, f"{name}.toml"))
            assert sc.name == name
            assert sc.jobs

    def test_toml_text_and_dict_agree(self):
        text = open(os.path.join(SCENARIOS, "minimal.toml")).read()
        assert load_scenario(text).canonical() == \
            load_scenario(os.path.join(SCENARIOS, "minimal.toml")).canonical()

    def test_missing_file(self):
        with pytest.raises(ScenarioError, match="file not found"):
            load_scenario("scenarios/no_such.toml")

    def test_malformed_toml(self):
        with pytest.raises(ScenarioError, match="malformed TOML"):
            load_scenario("workers = [unclosed\nname = 3\n")

    def test_all_offenses_reported_at_once(self):
        doc = minimal_doc()
        doc["cluster"]["workers"] = 0
        doc["strategy"]["name"] = "psychic"
        doc["duration_ms"] = -5
        doc["job"][0]["function"][0]["kind"] = "teleport"
        doc["job"][0]["function"][1]["worker"] = 99
        doc["job"].append(dict(doc["job"][0], id="q"))
        with pytest.raises(ScenarioError) as err:
            load_scenario(doc)
        text = str(err.value)
        for fragment in ("cluster.workers: must be positive",
                         "strategy.name: unknown strategy 'psychic'",
                         "scenario.duration_ms: must be positive",
                         "job[0].function[0].kind: unknown operator kind",
                         "job[1].id: duplicate job_id 'q'"):
            assert fragment in text

    def test_worker_pin_out_of_range_names_the_field(self):
        doc = minimal_doc()
        doc["job"][0]["function"][1]["worker"] = 99
        with pytest.raises(ScenarioError) as err:
            load_scenario(doc)
        assert "job[0].function[1].worker: worker 99 not in a cluster of 2" \
            in str(err.value)

    def test_cyclic_graph_rejected(self):
        doc = minimal_doc()
        doc["job"][0]["function"][2]["downstream"] = ["agg"]
        with pytest.raises(ScenarioError, match="cyclic graph: agg -> out -> agg"):
            load_scenario(doc)

    def test_workload_must_target_a_source(self):
        doc = minimal_doc()
        doc["job"][0]["workload"][0]["source"] = "agg"
        with pytest.raises(ScenarioError, match="cannot take injections"):
            load_scenario(doc)

    def test_unknown_keys_are_typo_guards(self):
        doc = minimal_doc()
        doc["job"][0]["workload"][0]["rate_mhz"] = 1.0
        doc["verbose"] = True
        with pytest.raises(ScenarioError) as err:
            load_scenario(doc)
        assert "job[0].workload[0].rate_mhz: unknown key" in str(err.value)
        assert "scenario.verbose: unknown key" in str(err.value)

    def test_sync_one_needs_uniform_cadence(self):
        doc = minimal_doc()
        doc["job"][0]["sync"] = "SYNC_ONE"
        doc["job"][0]["function"].insert(0, {
            "name": "src2", "kind": "map", "downstream": ["agg"],
            "service_us": 20.0})
        with pytest.raises(ScenarioError, match="shared watermark cadence"):
            load_scenario(doc)
        doc["job"][0]["workload"].append(
            {"source": "src2", "kind": "constant_rate", "rate_hz": 500.0,
             "watermark_every_ms": 25.0})
        assert load_scenario(doc).jobs[0].sync.value == "SYNC_ONE"

    def test_operator_params_checked_per_kind(self):
        doc = minimal_doc()
        doc["job"][0]["function"][0]["transform"] = "sparkle"
        doc["job"][0]["function"][1]["predicate"] = "even"
        with pytest.raises(ScenarioError) as err:
            load_scenario(doc)
        assert "unknown transform 'sparkle'" in str(err.value)
        assert "only filter functions test" in str(err.value)


class TestComparison:
    def test_identical_scenarios_are_comparable(self):
        a = load_scenario(os.path.join(SCENARIOS, "two_job_pareto.toml"))
        b = load_scenario(os.path.join(SCENARIOS, "two_job_pareto.toml"))
        assert comparison_conflicts(a, b) == []

    def test_declared_dimensions_may_differ(self):
        a = load_scenario(minimal_doc())
        doc = minimal_doc()
        doc["seed"] = 99
        doc["strategy"] = {"name": "slo_upstream", "max_fanout": 8}
        doc["job"][0]["function"][1]["prespawn_lessees"] = 4
        doc["job"][0]["function"][1]["state_extra_bytes"] = 65536
        b = load_scenario(doc)
        assert comparison_conflicts(a, b) == []

    def test_structural_differences_conflict(self):
        a = load_scenario(minimal_doc())
        doc = minimal_doc()
        doc["cluster"]["workers"] = 8
        doc["job"][0]["workload"][0]["rate_hz"] = 900.0
        b = load_scenario(doc)
        conflicts = comparison_conflicts(a, b)
        assert "workers" in conflicts
        assert "jobs[0].workloads[0].rate_hz" in conflicts


class TestRun:
    def test_minimal_counts_match_the_arithmetic(self):
        sc = load_scenario(os.path.join(SCENARIOS, "minimal.toml"))
        r = run_scenario(sc)
        assert r.report.injected == 100
        assert r.report.completed == 3
        assert r.report.jobs["q"].slo_ms == 20.0
        assert r.report.barriers["q"].count == 6

    def test_outputs_written(self, tmp_path):
        sc = load_scenario(os.path.join(SCENARIOS, "minimal.toml"))
        r = run_scenario(sc, out_dir=str(tmp_path), trace=True)
        assert sorted(r.files) == ["metrics", "summary", "trace"]
        lines = open(r.files["metrics"]).read().splitlines()
        assert lines[0] == "section,name,metric,value"
        assert len(lines) > 10
        summary = json.load(open(r.files["summary"]))
        assert summary["scenario"] == "minimal"
        assert "satisfaction_rate" in summary["jobs"]["q"]
        assert os.path.getsize(r.files["trace"]) > 0

    def test_seed_override_reaches_the_run(self, tmp_path):
        sc = load_scenario(os.path.join(SCENARIOS, "minimal.toml"))
        r = run_scenario(sc, out_dir=str(tmp_path), seed=99)
        assert r.seed == 99
        assert json.load(open(r.files["summary"]))["seed"] == 99

    def test_same_seed_byte_identical_outputs(self, tmp_path):
        sc = load_scenario(os.path.join(SCENARIOS, "two_job_pareto.toml"))
        a = run_scenario(sc, out_dir=str(tmp_path / "a"), trace=True)
        b = run_scenario(sc, out_dir=str(tmp_path / "b"), trace=True)
        assert open(a.files["trace"]).read() == open(b.files["trace"]).read()
        assert open(a.files["metrics"]).read() == open(b.files["metrics"]).read()

    def test_different_seeds_diverge_under_bursts(self, tmp_path):
        sc = load_scenario(os.path.join(SCENARIOS, "two_job_pareto.toml"))
        sc.duration_ms = 300.0
        a = run_scenario(sc, out_dir=str(tmp_path / "a"), trace=True, seed=1)
        b = run_scenario(sc, out_dir=str(tmp_path / "b"), trace=True, seed=2)
        assert open(a.files["trace"]).read() != open(b.files["trace"]).read()

    def test_trace_audits_clean(self, tmp_path):
        sc = load_scenario(os.path.join(SCENARIOS, "minimal.toml"))
        r = run_scenario(sc, out_dir=str(tmp_path), trace=True)
        problems = audit_trace(read_trace(r.files["trace"]))
        assert all(not v for v in problems.values()), problems

    def test_worker_pin_honored(self):
        doc = minimal_doc()
        doc["job"][0]["function"][1]["worker"] = 1
        sim = build_simulation(load_scenario(doc))
        placed = sim.runtime.directory.place_lessor(FunctionAddress("q", "agg"))
        assert placed.worker_id == 1

    def test_run_result_report_matches_summary_file(self, tmp_path):
        sc = load_scenario(os.path.join(SCENARIOS, "minimal.toml"))
        r = run_scenario(sc, out_dir=str(tmp_path))
        summary = json.load(open(r.files["summary"]))
        assert summary["injected"] == r.report.injected
        assert summary["jobs"]["q"]["satisfaction_rate"] == \
            r.report.jobs["q"].satisfaction_rate
