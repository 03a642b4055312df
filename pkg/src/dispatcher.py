import math
import time
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional
from concurrent.futures import ThreadPoolExecutor

from assignment import AssignmentProblem, FORBIDDEN, solve
from darp_routes import (InsertionConstraints, InfeasiblePlanError, greedy_insert,
                         schedule_plan, validate_plan)
from event_bus import COMMANDS, VehicleCommand


@dataclass(frozen=True)
class DispatchConfig:
    max_wait_s: float = 420.0
    candidates_k: int = 30
    relax_factor: float = 2.0
    capacity: int = 4
    max_detour_s: Optional[float] = None
    dropoff_window_s: Optional[float] = None
    pricing_workers: int = 1

    @property
    def constraints(self):
        return InsertionConstraints(self.capacity, self.max_detour_s, self.dropoff_window_s)


@dataclass
class BatchWindow:
    start_s: float
    end_s: float
    requests: list


@dataclass
class CandidateSet:
    candidates: Dict[str, List[str]]
    anchors: dict = field(default_factory=dict)

    def pairs(self):
        return [(vid, rid) for rid, vids in self.candidates.items() for vid in vids]


@dataclass
class Commitment:
    vehicle_id: str
    request_id: str
    plan: object
    cost_s: float
    rebalanced: bool = False


@dataclass
class DispatchOutcome:
    committed: List[Commitment]
    waiting: List[str]
    diagnostics: dict = field(default_factory=dict)


def collect_batch(now, new_requests, waiting_pool, batch_s):
    """Requests submitted in [now - batch_s, now) plus the carried-over waiting pool."""
    ratio = now / batch_s
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError(f"time {now} is not on a {batch_s} s batch boundary")
    start = now - batch_s
    by_id = {r.request_id: r for r in waiting_pool}
    for r in new_requests:
        if start <= r.submission_s < now:
            by_id[r.request_id] = r
    requests = sorted(by_id.values(), key=lambda r: (r.submission_s, r.request_id))
    return BatchWindow(start, now, requests)


def _free_seat(vehicle, anchor, oracle):
    """(node, time) of the first point where the vehicle has a free seat, or None."""
    try:
        plan = schedule_plan(vehicle.plan, anchor.node, anchor.ready_s, oracle)
    except InfeasiblePlanError:
        return None
    k = plan.first_free_slot(vehicle.capacity)
    if k is None:
        return None
    if k < 0:
        return anchor.node, anchor.ready_s
    return plan.stops[k].node, plan.stops[k].planned_arrival_s


def context_mapping(requests, fleet, oracle, now, config, deadlines=None, idle_only=False):
    """Per request, the K vehicles that can reach its pickup by its deadline, nearest first."""
    deadlines = deadlines or {}
    anchors = {}
    seats = {}
    for vehicle in sorted(fleet, key=lambda v: v.vehicle_id):
        if idle_only and not vehicle.is_idle:
            continue
        anchor = vehicle.anchor(oracle, now)
        if anchor is None:
            continue
        seat = _free_seat(vehicle, anchor, oracle)
        if seat is None:
            continue
        anchors[vehicle.vehicle_id] = anchor
        seats[vehicle.vehicle_id] = seat

    candidates = {}
    for request in requests:
        deadline = deadlines.get(request.request_id, request.pickup_deadline_s)
        to_pickup = oracle.times_to(request.origin_node)
        ranked = []
        for vid, (node, ready) in seats.items():
            estimate = ready + to_pickup.get(node, math.inf)
            if estimate <= deadline:
                ranked.append((estimate, vid))
        ranked.sort()
        candidates[request.request_id] = [vid for _, vid in ranked[:config.candidates_k]]
    return CandidateSet(candidates, anchors)


def _price(requests, candidate_set, fleet, oracle, config, deadlines=None):
    deadlines = deadlines or {}
    by_vehicle = {v.vehicle_id: v for v in fleet}
    by_request = {r.request_id: r for r in requests}
    pairs = candidate_set.pairs()
    constraints = config.constraints

    def evaluate(pair):
        vid, rid = pair
        return greedy_insert(by_vehicle[vid].plan, candidate_set.anchors[vid], by_request[rid], oracle,
                             constraints, deadlines.get(rid))

    if config.pricing_workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=config.pricing_workers) as executor:
            results = list(executor.map(evaluate, pairs))
    else:
        results = [evaluate(pair) for pair in pairs]
    return {pair: result for pair, result in zip(pairs, results) if result.feasible}


def _assign(requests, priced, fleet, config, rebalanced):
    logger = logging.getLogger()
    if not priced or not requests:
        return []
    vehicle_ids = sorted({vid for vid, _ in priced})
    request_ids = [r.request_id for r in requests]
    row = {vid: i for i, vid in enumerate(vehicle_ids)}
    col = {rid: j for j, rid in enumerate(request_ids)}
    costs = [[FORBIDDEN] * len(request_ids) for _ in vehicle_ids]
    for (vid, rid), result in priced.items():
        costs[row[vid]][col[rid]] = result.cost_s
    solution = solve(AssignmentProblem(vehicle_ids, request_ids, costs))

    by_vehicle = {v.vehicle_id: v for v in fleet}
    committed = []
    for vid, rid in solution.pairs:
        result = priced[(vid, rid)]
        vehicle = by_vehicle[vid]
        problems = validate_plan(result.plan, config.capacity, vehicle.onboard)
        if problems:
            logger.error("[ERROR] Rejected plan for %s/%s: %s", vid, rid, "; ".join(problems))
            continue
        committed.append(Commitment(vid, rid, result.plan, result.cost_s, rebalanced))
    return committed


def rebalance(unserved, fleet, oracle, now, config):
    """Retry unserved requests on idle vehicles with the pickup deadline relaxed from submission."""
    idle = [v for v in fleet if v.is_idle]
    if not idle or not unserved:
        return []
    relaxed = {r.request_id: r.submission_s + config.relax_factor * r.max_wait_s for r in unserved}
    eligible = [r for r in unserved if relaxed[r.request_id] >= now]
    if not eligible:
        return []
    candidate_set = context_mapping(eligible, idle, oracle, now, config, deadlines=relaxed)
    priced = _price(eligible, candidate_set, idle, oracle, config, deadlines=relaxed)
    return _assign(eligible, priced, idle, config, rebalanced=True)


def dispatch_batch(window, fleet, oracle, now, config):
    """Price candidate insertions, solve the assignment, then rebalance the leftovers on idle vehicles."""
    logger = logging.getLogger()
    started = time.perf_counter()
    fleet = list(fleet)

    live = [r for r in window.requests if r.pickup_deadline_s >= now]
    candidate_set = context_mapping(live, fleet, oracle, now, config)
    priced = _price(live, candidate_set, fleet, oracle, config)
    committed = _assign(live, priced, fleet, config, rebalanced=False)

    taken = {c.vehicle_id for c in committed}
    served = {c.request_id for c in committed}
    leftovers = [r for r in window.requests if r.request_id not in served]
    extra = rebalance(leftovers, [v for v in fleet if v.vehicle_id not in taken], oracle, now, config)
    committed.extend(extra)
    served.update(c.request_id for c in extra)

    waiting = [r.request_id for r in window.requests if r.request_id not in served]
    diagnostics = {
        "requests": len(window.requests),
        "candidate_pairs": len(candidate_set.pairs()),
        "feasible_pairs": len(priced),
        "committed": len(committed) - len(extra),
        "rebalanced": len(extra),
        "waiting": len(waiting),
        "wall_s": time.perf_counter() - started,
    }
    if window.requests:
        logger.debug("[DEBUG] Batch t=%.0f: %d requests, %d pairs, %d committed, %d rebalanced, %d waiting",
                     now, diagnostics["requests"], diagnostics["candidate_pairs"], diagnostics["committed"],
                     diagnostics["rebalanced"], diagnostics["waiting"])
    return DispatchOutcome(committed, waiting, diagnostics)


def publish_outcome(bus, outcome, now):
    for c in outcome.committed:
        stops = tuple((s.kind, s.request_id, s.node, s.planned_arrival_s) for s in c.plan.stops)
        bus.publish(COMMANDS, VehicleCommand(c.vehicle_id, c.request_id, stops, c.rebalanced), now)
