import filecmp
import json
import os
from dataclasses import replace

import pytest

from event_bus import GATEWAY_IN, REQUESTS, replay_log
from experiment_pipeline import BUS_LOG, RESOLVED_CONFIG, ExperimentPipeline, replay
from file_loader import save_trace, save_traffic
from scenario_config import IOT_DISABLED, IOT_ENABLED, ScenarioConfig


def test_grid_has_corridors(small_config):
    graph = ExperimentPipeline(small_config).build_graph()
    speeds = {e.speed_mps for e in graph.edges.values()}
    assert {small_config.default_speed_mps, small_config.highway_speed_mps} <= speeds


def test_prepare_is_seeded(small_config, tmp_path):
    a = ExperimentPipeline(small_config).prepare()
    b = ExperimentPipeline(replace(small_config, out_dir=str(tmp_path / "b"))).prepare()
    assert a.trace.requests == b.trace.requests
    assert a.traffic == b.traffic
    assert a.positions == b.positions
    assert len(a.positions) == small_config.fleet


def test_traffic_off(small_config):
    pipeline = ExperimentPipeline(replace(small_config, synthesize_traffic=False))
    assert pipeline.traffic(pipeline.build_graph()) == []


@pytest.mark.parametrize("mode", [IOT_ENABLED, IOT_DISABLED])
def test_runs_are_byte_identical(small_config, tmp_path, mode):
    pipeline = ExperimentPipeline(replace(small_config, mode=mode))
    pipeline.simulate(out_dir=str(tmp_path / "one"), plots=False)
    ExperimentPipeline(replace(small_config, mode=mode)).simulate(out_dir=str(tmp_path / "two"), plots=False)
    for name in ("kpi_series.csv", BUS_LOG, "detours.csv"):
        assert filecmp.cmp(tmp_path / "one" / name, tmp_path / "two" / name, shallow=False)


def test_simulate_writes_outputs(small_config, tmp_path):
    world, summary = ExperimentPipeline(small_config).simulate(out_dir=str(tmp_path / "run"), plots=False)
    run = tmp_path / "run"
    for name in (RESOLVED_CONFIG, BUS_LOG, "kpi_series.csv", "summary.json", "detour_histogram.csv"):
        assert (run / name).exists()
    assert summary.injected == world.injected
    assert summary.violations == 0
    assert ScenarioConfig.from_json(str(run / RESOLVED_CONFIG)) == small_config
    logged = list(replay_log(str(run / BUS_LOG)))
    assert sum(1 for m in logged if m.topic == REQUESTS) == world.injected


def test_traces_from_files(small_config, tmp_path):
    pipeline = ExperimentPipeline(small_config)
    inputs = pipeline.prepare()
    save_trace(inputs.trace, str(tmp_path / "demand.csv"))
    save_traffic(inputs.traffic, str(tmp_path / "traffic.csv"))
    from_files = ExperimentPipeline(replace(small_config, demand_trace=str(tmp_path / "demand.csv"),
                                            traffic_trace=str(tmp_path / "traffic.csv")))
    replayed = from_files.prepare()
    assert replayed.trace.requests == inputs.trace.requests
    assert replayed.traffic == inputs.traffic


def test_replay_reproduces_bus_log(small_config, tmp_path):
    run_dir = tmp_path / "run"
    ExperimentPipeline(small_config).simulate(out_dir=str(run_dir), plots=False)
    assert replay(str(run_dir))
    assert (run_dir / "replay" / BUS_LOG).exists()


def test_compare_pair(small_config, tmp_path):
    pipeline = ExperimentPipeline(replace(small_config, out_dir=str(tmp_path)))
    report = pipeline.compare()
    assert report["modes"] == [IOT_ENABLED, IOT_DISABLED]
    for mode in (IOT_ENABLED, IOT_DISABLED):
        assert (tmp_path / mode / "summary.json").exists()
    with open(tmp_path / "comparison.json", encoding="utf-8") as f:
        assert json.load(f)["seed"] == small_config.seed
    assert (tmp_path / "comparison_served_vs_time.svg").exists()


def test_seed_sweep(small_config, tmp_path):
    table = ExperimentPipeline(replace(small_config, out_dir=str(tmp_path))).seed_sweep(2)
    assert table["seed"].tolist() == [small_config.seed, small_config.seed + 1]
    assert os.path.exists(tmp_path / "seed_sweep.csv")


def test_detections_reach_the_log_under_congestion(small_config, tmp_path):
    config = replace(small_config, fleet=10, requests_per_window=(2, 3))
    ExperimentPipeline(config).simulate(out_dir=str(tmp_path), plots=False)
    sources = {m.payload.source for m in replay_log(str(tmp_path / BUS_LOG)) if m.topic == GATEWAY_IN}
    assert all(s.startswith("v") for s in sources)
