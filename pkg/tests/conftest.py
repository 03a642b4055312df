import os
import sys

import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(ROOT, "src"))
sys.path.insert(0, ROOT)

from demand import RequestTrace, TripRequest  # noqa: E402
from road_network import load_graph  # noqa: E402
from scenario_config import ScenarioConfig  # noqa: E402

TEST_DATA = os.path.join(ROOT, "Test_Data")
MICRO_GRAPH = os.path.join(TEST_DATA, "micro_graph.json")
MICRO_DEMAND = os.path.join(TEST_DATA, "micro_demand.csv")
MICRO_TRAFFIC = os.path.join(TEST_DATA, "micro_traffic.csv")
REGION_TABLE = os.path.join(ROOT, "Config_Files", "brainport_regions.json")

# Region E of the Brainport table, small enough for quick grid runs
SMALL_BBOX = (51.4584, 5.5157, 51.4154, 5.4453)


@pytest.fixture
def micro_graph():
    return load_graph(MICRO_GRAPH)


@pytest.fixture
def micro_request(micro_graph):
    """b -> d, submitted at t=2 with the default 420 s wait budget."""
    lat_b, lon_b = micro_graph.nodes["b"]
    lat_d, lon_d = micro_graph.nodes["d"]
    return TripRequest("r000000", lat_b, lon_b, lat_d, lon_d, 2.0, 422.0).mapped(micro_graph)


@pytest.fixture
def micro_trace(micro_request):
    return RequestTrace([micro_request], 0, 60.0)


@pytest.fixture
def micro_config(tmp_path):
    return ScenarioConfig(fleet=1, horizon_s=60.0, synthesize_traffic=False, out_dir=str(tmp_path))


@pytest.fixture
def small_config(tmp_path):
    """Few vehicles on a coarse grid over one region, with a short congestion window."""
    return ScenarioConfig(grid_bbox=SMALL_BBOX, grid_spacing_m=1000.0, fleet=5, horizon_s=600.0,
                          requests_per_window=(1, 2), congestion_start_s=0.0, congestion_end_s=600.0,
                          camera_period_s=120.0, out_dir=str(tmp_path))


@pytest.fixture
def one_way_trap():
    """A <-> X, A <-> P, P <-> D; with X>A, P>A and D>P blocked nothing gets back from D, P or X."""
    from road_network import RoadGraph, SpeedOverlay, TrafficEvent, apply_events

    nodes = [("A", 51.40, 5.40), ("X", 51.41, 5.40), ("P", 51.40, 5.41), ("D", 51.40, 5.42)]
    edges = [("A>X", "A", "X", 500.0, 10.0), ("X>A", "X", "A", 500.0, 10.0),
             ("A>P", "A", "P", 500.0, 10.0), ("P>A", "P", "A", 500.0, 10.0),
             ("P>D", "P", "D", 500.0, 10.0), ("D>P", "D", "P", 500.0, 10.0)]
    graph = RoadGraph(nodes, edges)
    overlay = apply_events(SpeedOverlay(graph), [TrafficEvent(e, 0.0, 0.0, "cam-01") for e in ("X>A", "P>A", "D>P")])
    return graph, overlay
