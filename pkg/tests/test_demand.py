import math
from collections import Counter

import numpy as np
import pytest

from conftest import REGION_TABLE
from demand import (REGION_CODES, Region, RegionTableError, TripRequest, builtin_regions, generate_trace,
                    init_vehicle_positions, load_regions)
from road_network import BoundingBox, generate_grid_graph, nearest_node
from scenario_config import BRAINPORT_BBOX


def by_code(regions):
    return {r.code: r for r in regions}


# ---------- region table ----------

def test_builtin_region_e():
    e = by_code(builtin_regions())["E"]
    assert tuple(e.bbox) == (51.4584, 5.5157, 51.4154, 5.4453)
    assert e.vehicle_prob == 0.30
    assert e.origin_prob == 0.30
    assert e.destination == e.destination_raw


def test_builtin_region_h_keeps_raw_row():
    h = by_code(builtin_regions())["H"]
    assert h.destination_raw[REGION_CODES.index("H")] == 0.60


def test_destination_rows_renormalized():
    for region in builtin_regions():
        assert math.fsum(region.destination) == pytest.approx(1.0, abs=1e-12)
    l_row = by_code(builtin_regions())["L"]
    assert math.fsum(l_row.destination_raw) == pytest.approx(0.73)
    assert l_row.destination[1] == pytest.approx(0.30 / 0.73)


def test_region_table_file_matches_builtin():
    assert load_regions(REGION_TABLE) == builtin_regions()


def test_region_table_bad_probabilities(tmp_path):
    path = tmp_path / "regions.json"
    path.write_text('{"regions": [{"code": "A", "ne": [1, 1], "sw": [0, 0], "vehicle": 0.5, "origin": 1.0,'
                    ' "destination": [1, 0, 0, 0, 0, 0]}]}')
    with pytest.raises(RegionTableError):
        load_regions(str(path))


def test_degenerate_region_rejected():
    with pytest.raises(RegionTableError, match="north-east"):
        Region("X", BoundingBox(51.0, 5.0, 51.5, 5.5), 1.0, 1.0, (1, 0, 0, 0, 0, 0))


# ---------- traces ----------

def test_request_deadline_must_follow_submission():
    with pytest.raises(ValueError):
        TripRequest("r0", 51.0, 5.0, 51.1, 5.1, 10.0, 10.0)


def test_one_hour_trace_size():
    trace = generate_trace(builtin_regions(), 3600.0, (1, 4), 10.0, seed=1)
    assert 360 <= len(trace.requests) <= 1440
    assert trace.horizon_s == 3600.0


def test_trace_windows_and_order():
    trace = generate_trace(builtin_regions(), 600.0, (1, 4), 10.0, seed=2)
    submissions = [r.submission_s for r in trace.requests]
    assert submissions == sorted(submissions)
    per_window = Counter(int(s // 10.0) for s in submissions)
    assert set(per_window) == set(range(60))
    assert all(1 <= n <= 4 for n in per_window.values())
    assert all(r.max_wait_s == pytest.approx(420.0) for r in trace.requests)
    assert len({r.request_id for r in trace.requests}) == len(trace.requests)


def test_trace_is_seed_deterministic():
    regions = builtin_regions()
    a = generate_trace(regions, 600.0, (1, 4), 10.0, seed=5)
    b = generate_trace(regions, 600.0, (1, 4), 10.0, seed=5)
    c = generate_trace(regions, 600.0, (1, 4), 10.0, seed=6)
    assert a.requests == b.requests
    assert a.requests != c.requests


def test_origins_inside_their_region():
    regions = by_code(builtin_regions())
    trace = generate_trace(list(regions.values()), 1200.0, (1, 4), 10.0, seed=3)
    for request, code in zip(trace.requests, trace.region_codes):
        assert regions[code].bbox.contains(request.origin_lat, request.origin_lon)


def test_horizon_must_be_window_multiple():
    with pytest.raises(ValueError, match="multiple"):
        generate_trace(builtin_regions(), 605.0, (1, 4), 10.0, seed=0)


@pytest.mark.parametrize("seed", range(20))
def test_mapped_trace_has_no_zero_length_trips(seed):
    # grid over region E only: trips between other regions snap onto its border
    bbox = (51.4584, 5.5157, 51.4154, 5.4453)
    graph = generate_grid_graph(bbox, 1000.0, 13.9)
    trace = generate_trace(builtin_regions(), 600.0, (1, 4), 10.0, seed=seed, graph=graph)
    assert len(trace.requests) >= 60
    for r in trace.requests:
        assert nearest_node(graph, r.origin_lat, r.origin_lon) != nearest_node(graph, r.dest_lat, r.dest_lon)


def test_origin_frequencies_follow_table():
    regions = builtin_regions()
    trace = generate_trace(regions, 20000.0, (10, 10), 10.0, seed=11)
    counts = Counter(trace.region_codes)
    n = len(trace.requests)
    for r in regions:
        assert counts[r.code] / n == pytest.approx(r.origin_prob, abs=0.02)


@pytest.mark.slow
def test_origin_frequencies_large_sample():
    regions = builtin_regions()
    trace = generate_trace(regions, 100000.0, (10, 10), 10.0, seed=12)
    counts = Counter(trace.region_codes)
    for r in regions:
        assert counts[r.code] / len(trace.requests) == pytest.approx(r.origin_prob, abs=0.01)


# ---------- fleet placement ----------

def test_fleet_inside_brainport():
    positions = init_vehicle_positions(builtin_regions(), 100, seed=0)
    area = BoundingBox(*BRAINPORT_BBOX)
    assert len(positions) == 100
    assert all(area.contains(lat, lon) for lat, lon in positions)


def test_forced_region():
    regions = [Region(code, r.bbox, 1.0 if code == "H" else 0.0, r.origin_prob, r.destination_raw)
               for code, r in by_code(builtin_regions()).items()]
    (lat, lon), = init_vehicle_positions(regions, 1, seed=9)
    assert by_code(regions)["H"].bbox.contains(lat, lon)


def test_vehicle_frequencies_follow_table():
    regions = builtin_regions()
    _, codes = init_vehicle_positions(regions, 100000, seed=13, with_regions=True)
    counts = Counter(codes)
    for r in regions:
        assert counts[r.code] / 100000 == pytest.approx(r.vehicle_prob, abs=0.01)


def test_fleet_size_must_be_positive():
    with pytest.raises(ValueError):
        init_vehicle_positions(builtin_regions(), 0, seed=0)


def test_placement_is_seed_deterministic():
    regions = builtin_regions()
    assert init_vehicle_positions(regions, 20, 3) == init_vehicle_positions(regions, 20, 3)
    assert not np.allclose(init_vehicle_positions(regions, 20, 3), init_vehicle_positions(regions, 20, 4))
