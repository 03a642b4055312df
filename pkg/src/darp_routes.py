"""Vehicle route plans and greedy single-vehicle dial-a-ride insertion."""

import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

PICKUP = "pickup"
DROPOFF = "dropoff"
TIME_SLACK_S = 1e-9


class InfeasiblePlanError(ValueError):
    pass


@dataclass(frozen=True)
class Stop:
    kind: str
    request_id: str
    node: str
    deadline_s: float = math.inf
    planned_arrival_s: float = 0.0
    party_size: int = 1

    @property
    def load_change(self):
        return self.party_size if self.kind == PICKUP else -self.party_size


@dataclass(frozen=True)
class RoutePlan:
    stops: Tuple[Stop, ...] = ()
    loads: Tuple[int, ...] = ()
    start_load: int = 0
    depart_s: float = 0.0
    completion_s: float = 0.0

    @property
    def is_empty(self):
        return not self.stops

    @property
    def request_ids(self):
        return {s.request_id for s in self.stops}

    @property
    def max_load(self):
        return max((self.start_load, *self.loads))

    def first_free_slot(self, capacity):
        """Index of the stop after which a seat is free (-1: free from the start), None if never."""
        if self.start_load < capacity:
            return -1
        for k, load in enumerate(self.loads):
            if load < capacity:
                return k
        return None


def load_profile(stops, start_load=0):
    loads = []
    load = start_load
    for s in stops:
        load += s.load_change
        loads.append(load)
    return tuple(loads)


def make_plan(stops, start_load=0):
    stops = tuple(stops)
    return RoutePlan(stops, load_profile(stops, start_load), start_load)


@dataclass(frozen=True)
class VehicleAnchor:
    """Where and when a vehicle can next change course, plus what it carries."""
    vehicle_id: str
    node: str
    ready_s: float
    capacity: int = 4
    onboard: Tuple[str, ...] = ()


@dataclass(frozen=True)
class InsertionConstraints:
    capacity: int = 4
    max_detour_s: Optional[float] = None
    dropoff_window_s: Optional[float] = None

    def dropoff_deadline(self, request, direct_s):
        deadline = math.inf
        if self.max_detour_s is not None:
            deadline = request.submission_s + direct_s + self.max_detour_s
        if self.dropoff_window_s is not None:
            deadline = min(deadline, request.submission_s + self.dropoff_window_s)
        return deadline


@dataclass(frozen=True)
class InsertionResult:
    feasible: bool
    cost_s: float = math.inf
    pickup_index: int = -1
    dropoff_index: int = -1
    plan: Optional[RoutePlan] = None


INFEASIBLE = InsertionResult(False)


def _late(t, deadline_s):
    # unreachable legs make t infinite, which no deadline admits
    return math.isinf(t) or t > deadline_s


def schedule_plan(plan, anchor_node, depart_s, oracle):
    """Propagate planned arrivals from the anchor; zero dwell at stops."""
    t = depart_s
    prev = anchor_node
    stops = []
    for s in plan.stops:
        leg = oracle.time(prev, s.node)
        if math.isinf(leg):
            raise InfeasiblePlanError(f"no route from {prev} to {s.node} for {s.kind} of {s.request_id}")
        t = t + leg
        stops.append(replace(s, planned_arrival_s=t))
        prev = s.node
    return RoutePlan(tuple(stops), plan.loads, plan.start_load, depart_s, t)


def greedy_insert(plan, vehicle, request, oracle, constraints, pickup_deadline_s=None):
    """Cheapest feasible (pickup, dropoff) insertion of request into plan.

    Cost is the increase of plan completion time. Candidate pairs are scanned
    in lexicographic (i, j) order and only a strictly cheaper pair replaces
    the incumbent.
    """
    if request.request_id in plan.request_ids:
        raise ValueError(f"request {request.request_id} is already in the plan")
    pickup, dropoff = request.origin_node, request.dest_node
    q = request.party_size
    cap = constraints.capacity
    deadline_p = request.pickup_deadline_s if pickup_deadline_s is None else pickup_deadline_s

    direct = oracle.time(pickup, dropoff)
    if math.isinf(direct):
        return INFEASIBLE
    deadline_d = constraints.dropoff_deadline(request, direct)

    try:
        base = schedule_plan(plan, vehicle.node, vehicle.ready_s, oracle)
    except InfeasiblePlanError:
        return INFEASIBLE
    stops = base.stops
    n = len(stops)
    loads_before = (base.start_load,) + base.loads
    nodes = (vehicle.node,) + tuple(s.node for s in stops)
    arrivals = (vehicle.ready_s,) + tuple(s.planned_arrival_s for s in stops)

    best = None
    for i in range(n + 1):
        if loads_before[i] + q > cap:
            continue
        t_pick = arrivals[i] + oracle.time(nodes[i], pickup)
        if _late(t_pick, deadline_p):
            continue
        for j in range(i, n + 1):
            if j > i and loads_before[j] + q > cap:
                break
            t, prev, ok = t_pick, pickup, True
            for k in range(i, j):
                t = t + oracle.time(prev, stops[k].node)
                if _late(t, stops[k].deadline_s):
                    ok = False
                    break
                prev = stops[k].node
            if not ok:
                break
            t = t + oracle.time(prev, dropoff)
            if _late(t, deadline_d):
                continue
            prev = dropoff
            for k in range(j, n):
                t = t + oracle.time(prev, stops[k].node)
                if _late(t, stops[k].deadline_s):
                    ok = False
                    break
                prev = stops[k].node
            if not ok:
                continue
            delta = t - base.completion_s
            if best is None or delta < best[0]:
                best = (delta, i, j)

    if best is None:
        return INFEASIBLE
    _, i, j = best
    new_stops = (stops[:i]
                 + (Stop(PICKUP, request.request_id, pickup, deadline_p, party_size=q),)
                 + stops[i:j]
                 + (Stop(DROPOFF, request.request_id, dropoff, deadline_d, party_size=q),)
                 + stops[j:])
    new_plan = schedule_plan(make_plan(new_stops, base.start_load), vehicle.node, vehicle.ready_s, oracle)
    delta = new_plan.completion_s - base.completion_s
    return InsertionResult(True, delta if delta > 0 else 0.0, i, j + 1, new_plan)


def remove_request(plan, request_id):
    return make_plan([s for s in plan.stops if s.request_id != request_id], plan.start_load)


def validate_plan(plan, capacity, onboard=(), check_deadlines=True):
    """Full re-check of a plan; returns the list of problems found (empty when valid)."""
    problems = []
    if load_profile(plan.stops, plan.start_load) != plan.loads:
        problems.append("load profile does not match stops")
    if plan.start_load != len(onboard):
        problems.append(f"start load {plan.start_load} but {len(onboard)} onboard")
    for k, load in enumerate(plan.loads):
        if load < 0 or load > capacity:
            problems.append(f"load {load} after stop {k} outside [0, {capacity}]")
    seen_pickup = set()
    dropped = set()
    onboard = set(onboard)
    prev_arrival = plan.depart_s
    for k, s in enumerate(plan.stops):
        if s.planned_arrival_s + TIME_SLACK_S < prev_arrival:
            problems.append(f"arrival at stop {k} goes back in time")
        prev_arrival = s.planned_arrival_s
        if check_deadlines and s.planned_arrival_s > s.deadline_s + TIME_SLACK_S:
            problems.append(f"{s.kind} of {s.request_id} planned at {s.planned_arrival_s:.1f} after deadline {s.deadline_s:.1f}")
        if s.kind == PICKUP:
            if s.request_id in onboard or s.request_id in seen_pickup:
                problems.append(f"extra pickup for {s.request_id}")
            seen_pickup.add(s.request_id)
        else:
            if s.request_id in dropped:
                problems.append(f"extra dropoff for {s.request_id}")
            if s.request_id not in onboard and s.request_id not in seen_pickup:
                problems.append(f"dropoff before pickup for {s.request_id}")
            dropped.add(s.request_id)
    for rid in (onboard | seen_pickup) - dropped:
        problems.append(f"no dropoff for {rid}")
    return problems
