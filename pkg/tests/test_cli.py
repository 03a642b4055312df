import logging
import os

import pytest

import RideshareIoT
from conftest import SMALL_BBOX
from file_loader import load_trace, load_traffic
from road_network import load_graph
from scenario_config import IOT_DISABLED, ScenarioConfig


@pytest.fixture(autouse=True)
def reset_logging():
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        handler.close()
        root.removeHandler(handler)


def small_args(tmp_path, *extra):
    bbox = [str(x) for x in SMALL_BBOX]
    return ["--preset", "desk", "--grid-bbox", *bbox, "--fleet", "4", "--horizon-s", "300",
            "--out-dir", str(tmp_path), *extra]


def test_flags_override_preset(tmp_path):
    parser = RideshareIoT.build_parser()
    args = parser.parse_args(["simulate", *small_args(tmp_path, "--mode", IOT_DISABLED, "--seed", "3")])
    config = RideshareIoT.resolve_config(args)
    assert (config.fleet, config.mode, config.seed, config.horizon_s) == (4, IOT_DISABLED, 3, 300.0)
    assert config.grid_bbox == SMALL_BBOX
    assert config.requests_per_window == (1, 1)


def test_invalid_config_exits_nonzero(tmp_path, capsys):
    assert RideshareIoT.main(["simulate", *small_args(tmp_path, "--batch-s", "7")]) == 1
    assert "[ERROR]" in capsys.readouterr().err


def test_unknown_mode_rejected(tmp_path):
    with pytest.raises(SystemExit):
        RideshareIoT.build_parser().parse_args(["simulate", "--mode", "iot-maybe"])


def test_gen_graph(tmp_path):
    path = tmp_path / "graphs" / "graph.json"
    argv = ["gen-graph", *small_args(tmp_path, "--output", str(path))]
    assert RideshareIoT.main(argv) == 0
    assert len(load_graph(str(path)).nodes) > 4
    expected = RideshareIoT.resolve_config(RideshareIoT.build_parser().parse_args(argv))
    assert ScenarioConfig.from_json(str(tmp_path / "graphs" / "resolved_config.json")) == expected


def test_gen_demand_and_traffic(tmp_path):
    demand = tmp_path / "demand" / "demand.csv"
    traffic = tmp_path / "traffic" / "traffic.csv"
    assert RideshareIoT.main(["gen-demand", *small_args(tmp_path, "--output", str(demand))]) == 0
    assert RideshareIoT.main(["gen-traffic", *small_args(tmp_path, "--output", str(traffic))]) == 0
    assert len(load_trace(str(demand)).requests) == 30
    assert load_traffic(str(traffic))
    for directory in ("demand", "traffic"):
        resolved = ScenarioConfig.from_json(str(tmp_path / directory / "resolved_config.json"))
        assert (resolved.fleet, resolved.horizon_s, resolved.grid_bbox) == (4, 300.0, SMALL_BBOX)


def test_simulate_then_replay(tmp_path):
    assert RideshareIoT.main(["simulate", *small_args(tmp_path)]) == 0
    assert (tmp_path / "summary.json").exists()
    assert (tmp_path / "rideshare.log").exists()
    assert RideshareIoT.main(["replay", *small_args(tmp_path, "--run-dir", str(tmp_path))]) == 0


def test_compare_command(tmp_path):
    assert RideshareIoT.main(["compare", *small_args(tmp_path)]) == 0
    assert (tmp_path / "comparison.json").exists()
    assert (tmp_path / "resolved_config.json").exists()
    assert os.path.isdir(tmp_path / "iot-enabled")
