import numpy as np
import pytest

from darp_routes import DROPOFF, PICKUP, InsertionConstraints, RoutePlan, Stop, VehicleAnchor, greedy_insert, make_plan
from dispatcher import (BatchWindow, DispatchConfig, collect_batch, context_mapping, dispatch_batch,
                        publish_outcome, rebalance)
from event_bus import COMMANDS, MessageBus
from fleet import VehicleState
from helpers import brute_force_assignment, line_graph, make_request
from road_network import FREEFLOW, LIVE, SpeedOverlay


def window_of(requests, now=10.0):
    return BatchWindow(now - 10.0, now, list(requests))


# ---------- collect_batch ----------

def test_window_unions_new_and_waiting():
    new = [make_request(f"n{k}", "a", "b", submission_s=1.0 + k) for k in range(3)]
    waiting = [make_request(f"w{k}", "a", "b", submission_s=0.0) for k in range(2)]
    window = collect_batch(10.0, new, waiting, 10.0)
    assert len(window.requests) == 5
    assert [r.request_id for r in window.requests[:2]] == ["w0", "w1"]
    assert (window.start_s, window.end_s) == (0.0, 10.0)


def test_empty_window():
    assert collect_batch(10.0, [], [], 10.0).requests == []


def test_submission_on_boundary_goes_to_next_window():
    request = make_request("r0", "a", "b", submission_s=10.0)
    assert collect_batch(10.0, [request], [], 10.0).requests == []
    assert collect_batch(20.0, [request], [], 10.0).requests == [request]


def test_off_boundary_rejected():
    with pytest.raises(ValueError, match="boundary"):
        collect_batch(15.0, [], [], 10.0)


# ---------- context_mapping ----------

def test_full_vehicle_excluded():
    graph = line_graph(12)
    onboard = ["o1", "o2", "o3", "o4"]
    full = VehicleState("v0", "p001", 4, onboard=onboard,
                        plan=make_plan([Stop(DROPOFF, rid, "p010") for rid in onboard], start_load=4))
    free = VehicleState("v1", "p002")
    request = make_request("r0", "p000", "p005", submission_s=5.0)
    candidates = context_mapping([request], [full, free], graph.oracle(), 10.0, DispatchConfig())
    assert candidates.candidates["r0"] == ["v1"]


def test_far_vehicle_excluded():
    graph = line_graph(12)
    near = VehicleState("v0", "p001")
    far = VehicleState("v1", "p010")  # 600 s away, budget 420 s
    request = make_request("r0", "p000", "p005", submission_s=5.0)
    candidates = context_mapping([request], [near, far], graph.oracle(), 10.0, DispatchConfig())
    assert candidates.candidates["r0"] == ["v0"]


def test_k_nearest_candidates():
    graph = line_graph(101, length_m=10.0)
    rng = np.random.default_rng(0)
    fleet = [VehicleState(f"v{i:03d}", f"p{int(rng.integers(1, 101)):03d}") for i in range(100)]
    request = make_request("r0", "p000", "p050", submission_s=0.0)
    oracle = graph.oracle()
    candidates = context_mapping([request], fleet, oracle, 10.0, DispatchConfig(candidates_k=30))
    expected = sorted(fleet, key=lambda v: (oracle.time(v.node, "p000"), v.vehicle_id))[:30]
    assert candidates.candidates["r0"] == [v.vehicle_id for v in expected]


# ---------- dispatch_batch ----------

def test_single_request_single_vehicle(micro_graph, micro_request):
    oracle = micro_graph.oracle()
    vehicle = VehicleState("v0", "a")
    outcome = dispatch_batch(window_of([micro_request]), [vehicle], oracle, 10.0, DispatchConfig())
    expected = greedy_insert(RoutePlan(), VehicleAnchor("v0", "a", 10.0), micro_request, oracle,
                             InsertionConstraints())
    assert len(outcome.committed) == 1
    commitment = outcome.committed[0]
    assert (commitment.vehicle_id, commitment.request_id) == ("v0", "r000000")
    assert commitment.plan == expected.plan
    assert commitment.cost_s == 35.0
    assert outcome.waiting == []
    assert outcome.diagnostics["committed"] == 1


def test_two_requests_one_vehicle(micro_graph):
    requests = [make_request("r0", "b", "d", 2.0, graph=micro_graph),
                make_request("r1", "c", "a", 3.0, graph=micro_graph)]
    outcome = dispatch_batch(window_of(requests), [VehicleState("v0", "a")], micro_graph.oracle(), 10.0,
                             DispatchConfig())
    assert len(outcome.committed) == 1
    assert len(outcome.waiting) == 1
    assert outcome.diagnostics["rebalanced"] == 0


def test_empty_window_is_noop(micro_graph):
    outcome = dispatch_batch(window_of([]), [VehicleState("v0", "a")], micro_graph.oracle(), 10.0, DispatchConfig())
    assert outcome.committed == []
    assert outcome.waiting == []


def test_three_by_three_matches_composed_oracle(micro_graph):
    oracle = micro_graph.oracle()
    fleet = [VehicleState("v0", "a"), VehicleState("v1", "b"), VehicleState("v2", "c")]
    requests = [make_request("r1", "b", "d", 2.0, graph=micro_graph),
                make_request("r2", "c", "a", 3.0, graph=micro_graph),
                make_request("r3", "d", "b", 4.0, graph=micro_graph)]
    costs = [[greedy_insert(RoutePlan(), VehicleAnchor(v.vehicle_id, v.node, 10.0), r, oracle,
                            InsertionConstraints()).cost_s for r in requests] for v in fleet]
    _, total, pairs = brute_force_assignment([v.vehicle_id for v in fleet], [r.request_id for r in requests], costs)

    outcome = dispatch_batch(window_of(requests), fleet, oracle, 10.0, DispatchConfig())
    assert sorted((c.vehicle_id, c.request_id) for c in outcome.committed) == list(pairs)
    assert sum(c.cost_s for c in outcome.committed) == total == 90.0


def test_mode_equivalence_without_traffic(micro_graph):
    fleet = [VehicleState("v0", "a"), VehicleState("v1", "c")]
    requests = [make_request("r1", "b", "d", 2.0, graph=micro_graph),
                make_request("r2", "d", "b", 3.0, graph=micro_graph)]
    free = dispatch_batch(window_of(requests), fleet, micro_graph.oracle(None, FREEFLOW), 10.0, DispatchConfig())
    live = dispatch_batch(window_of(requests), fleet, micro_graph.oracle(SpeedOverlay(micro_graph), LIVE), 10.0,
                          DispatchConfig())
    assert free.committed == live.committed
    assert free.waiting == live.waiting


def test_parallel_pricing_is_identical(micro_graph):
    fleet = [VehicleState("v0", "a"), VehicleState("v1", "b"), VehicleState("v2", "c")]
    requests = [make_request("r1", "b", "d", 2.0, graph=micro_graph),
                make_request("r2", "c", "a", 3.0, graph=micro_graph)]
    serial = dispatch_batch(window_of(requests), fleet, micro_graph.oracle(), 10.0, DispatchConfig())
    parallel = dispatch_batch(window_of(requests), fleet, micro_graph.oracle(), 10.0,
                              DispatchConfig(pricing_workers=4))
    assert serial.committed == parallel.committed


def test_committed_plans_revalidate(micro_graph):
    from darp_routes import validate_plan

    fleet = [VehicleState("v0", "a"), VehicleState("v1", "b")]
    requests = [make_request(f"r{k}", o, d, float(k), graph=micro_graph)
                for k, (o, d) in enumerate([("b", "d"), ("c", "a"), ("d", "b")])]
    outcome = dispatch_batch(window_of(requests), fleet, micro_graph.oracle(), 10.0, DispatchConfig())
    assert len({c.request_id for c in outcome.committed}) == len(outcome.committed)
    assert len({c.vehicle_id for c in outcome.committed}) == len(outcome.committed)
    for c in outcome.committed:
        assert validate_plan(c.plan, 4) == []
    assert len(outcome.committed) + len(outcome.waiting) == len(requests)


# ---------- rebalance ----------

def test_rebalance_without_idle_vehicles(micro_graph):
    busy = VehicleState("v0", "a", plan=make_plan([Stop(PICKUP, "x", "b"), Stop(DROPOFF, "x", "c")]))
    request = make_request("r1", "b", "d", 2.0, graph=micro_graph)
    assert rebalance([request], [busy], micro_graph.oracle(), 10.0, DispatchConfig()) == []


def test_relaxed_deadline_reaches_far_idle_vehicle():
    graph = line_graph(12)
    far = VehicleState("v0", "p009")  # 540 s away, base budget 420 s
    request = make_request("r0", "p000", "p001", submission_s=5.0)
    outcome = dispatch_batch(window_of([request]), [far], graph.oracle(), 10.0, DispatchConfig(relax_factor=2.0))
    assert outcome.diagnostics["committed"] == 0
    assert outcome.diagnostics["rebalanced"] == 1
    assert outcome.committed[0].rebalanced
    assert outcome.committed[0].plan.stops[0].deadline_s == 5.0 + 2.0 * 420.0


def test_rebalance_considers_idle_vehicles_only():
    graph = line_graph(12)
    busy = VehicleState("v0", "p001", plan=make_plan([Stop(PICKUP, "x", "p002"), Stop(DROPOFF, "x", "p003")]))
    idle = VehicleState("v1", "p009")
    request = make_request("r0", "p000", "p001", submission_s=5.0)
    committed = rebalance([request], [busy, idle], graph.oracle(), 10.0, DispatchConfig())
    assert [c.vehicle_id for c in committed] == ["v1"]


def test_expired_request_skips_main_pass():
    graph = line_graph(12)
    near = VehicleState("v0", "p001")
    request = make_request("r0", "p000", "p001", submission_s=0.0, max_wait_s=420.0)
    outcome = dispatch_batch(window_of([request], now=430.0), [near], graph.oracle(), 430.0, DispatchConfig())
    assert outcome.diagnostics["candidate_pairs"] == 0
    assert [c.rebalanced for c in outcome.committed] == [True]


def test_request_past_relaxed_deadline_keeps_waiting():
    graph = line_graph(12)
    request = make_request("r0", "p000", "p001", submission_s=0.0, max_wait_s=420.0)
    outcome = dispatch_batch(window_of([request], now=850.0), [VehicleState("v0", "p001")], graph.oracle(), 850.0,
                             DispatchConfig())
    assert outcome.committed == []
    assert outcome.waiting == ["r0"]


def test_publish_outcome(micro_graph, micro_request):
    bus = MessageBus()
    outcome = dispatch_batch(window_of([micro_request]), [VehicleState("v0", "a")], micro_graph.oracle(), 10.0,
                             DispatchConfig())
    publish_outcome(bus, outcome, 10.0)
    (message,) = bus.logs[COMMANDS]
    assert message.payload.vehicle_id == "v0"
    assert [s[0] for s in message.payload.stops] == [PICKUP, DROPOFF]
    assert message.timestamp_s == 10.0


def test_blocked_return_leg_leaves_request_waiting(one_way_trap):
    graph, overlay = one_way_trap
    vehicle = VehicleState("v0", "A", onboard=["o1"], plan=make_plan([Stop(DROPOFF, "o1", "X")], start_load=1))
    request = make_request("r1", "P", "D", submission_s=5.0)
    outcome = dispatch_batch(window_of([request]), [vehicle], graph.oracle(overlay, LIVE), 10.0, DispatchConfig())
    assert outcome.committed == []
    assert outcome.waiting == ["r1"]
