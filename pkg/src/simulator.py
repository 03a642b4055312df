"""Fixed-step fleet simulation.

Vehicles always move at the live overlay speeds; the scheduler prices and
routes with the oracle of its mode (live for iot-enabled, freeflow for
iot-disabled). The loop is single-threaded and fully deterministic for a
given config, trace and traffic stream.
"""

import time
import logging
from collections import Counter, OrderedDict, deque, namedtuple
from dataclasses import dataclass, field, replace
from typing import Dict, List

from tqdm import tqdm

from darp_routes import PICKUP, make_plan
from dispatcher import collect_batch, dispatch_batch, publish_outcome
from event_bus import (GATEWAY_IN, GATEWAY_OUT, REQUESTS, TELEMETRY, TRAFFIC, InterworkingGateway,
                       MessageBus, VehicleTelemetry)
from fleet import (AT_STOP, DRIVING, IDLE, ASSIGNED, ONBOARD, SERVED, WAITING, REQUEST_STATES,
                   RequestStatus, VehicleState)
from metrics_report import DetourRecord, sample
from road_network import (FREEFLOW, LIVE, SpeedOverlay, TrafficEvent, TrafficEventError, apply_event,
                          nearest_node, validate_event)
from scenario_config import IOT_ENABLED

CONTINUITY_TOL_M = 1e-6
CONTINUITY_TOL_S = 1e-9

log = logging.getLogger()

Position = namedtuple("Position", ["node", "edge_id", "offset_m"])


def check_continuity(graph, overlay, start, trail, end, tick_s):
    """Problems with one vehicle's move over a tick, rebuilt from where it started and ended.

    trail lists the edges entered during the tick, in order. Speeds come from
    overlay, which does not change while vehicles move.
    """
    problems = []
    edges = ([start.edge_id] if start.edge_id is not None else []) + list(trail)
    node = start.node
    for edge_id in edges:
        edge = graph.edges[edge_id]
        if edge.source != node:
            problems.append(f"edge {edge_id} starts at {edge.source}, not at {node}")
        node = edge.target
    on_edge = end.edge_id is not None
    if on_edge and (not edges or end.edge_id != edges[-1]):
        problems.append(f"ends on {end.edge_id} without entering it")
        return problems
    if not on_edge and end.node != node:
        problems.append(f"ends at {end.node}, expected {node}")

    used = 0.0
    for k, edge_id in enumerate(edges):
        length = graph.edges[edge_id].length_m
        first = start.offset_m if k == 0 and start.edge_id is not None else 0.0
        last = end.offset_m if on_edge and k == len(edges) - 1 else length
        distance = last - first
        if distance < -CONTINUITY_TOL_M:
            problems.append(f"moved backwards {-distance:.9f} m on {edge_id}")
        if distance <= 0:
            continue
        speed = overlay.speed(edge_id)
        if speed <= 0:
            problems.append(f"moved {distance:.3f} m on closed edge {edge_id}")
            continue
        used += distance / speed

    end_speed = overlay.speed(end.edge_id) if on_edge else 0.0
    if end_speed > 0:
        # still driving at tick end, so the whole tick was spent moving
        gap_m = abs(tick_s - used) * end_speed
        if gap_m > CONTINUITY_TOL_M:
            problems.append(f"position is {gap_m:.9f} m off the distance driven in {tick_s} s")
    elif used > tick_s + CONTINUITY_TOL_S:
        problems.append(f"drove {used:.9f} s worth of road in a {tick_s} s tick")
    return problems


@dataclass(frozen=True)
class SimClock:
    now_s: float
    tick_s: float
    horizon_s: float
    batch_s: float

    def __post_init__(self):
        if not self.tick_s > 0:
            raise ValueError(f"tick must be > 0, got {self.tick_s}")
        ratio = self.batch_s / self.tick_s
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"batch period {self.batch_s} is not a multiple of tick {self.tick_s}")

    @property
    def ticks_per_batch(self):
        return int(round(self.batch_s / self.tick_s))

    @property
    def total_ticks(self):
        return int(round(self.horizon_s / self.tick_s))


@dataclass
class World:
    clock: SimClock
    graph: object
    overlay: SpeedOverlay
    vehicles: Dict[str, VehicleState]
    requests: Dict[str, RequestStatus] = field(default_factory=OrderedDict)
    waiting: List[str] = field(default_factory=list)
    status_counts: Counter = field(default_factory=Counter)
    samples: list = field(default_factory=list)
    detours: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    commitments: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    step_index: int = 0
    rejected_events: int = 0
    gateway_alerts: int = 0
    reroutes: int = 0
    runtime_s: float = 0.0

    @property
    def now(self):
        return self.clock.now_s

    @property
    def injected(self):
        return len(self.requests)


class Simulator:
    def __init__(self, config, graph, trace, traffic=(), positions=(), bus=None):
        self.config = config
        self.graph = graph
        self.scheduler_mode = LIVE if config.mode == IOT_ENABLED else FREEFLOW
        self.dispatch_config = config.dispatch_config
        self.bus = bus or MessageBus()

        vehicles = OrderedDict()
        for i, (lat, lon) in enumerate(positions):
            vid = f"v{i:03d}"
            vehicles[vid] = VehicleState(vid, nearest_node(graph, lat, lon), config.capacity)
        if not vehicles:
            raise ValueError("simulation needs at least one vehicle")
        clock = SimClock(0.0, config.tick_s, config.horizon_s, config.batch_s)
        self.world = World(clock, graph, SpeedOverlay(graph, config.plausibility_factor), vehicles)

        self._pending = deque(sorted(trace.requests, key=lambda r: (r.submission_s, r.request_id)))
        self._traffic = deque(sorted(traffic, key=lambda e: (e.timestamp_s, e.source, e.edge_id)))
        self._ticks_per_sample = max(1, int(round(config.sample_period_s / config.tick_s)))
        self._ticks_per_telemetry = max(1, int(round(config.telemetry_period_s / config.tick_s)))
        self._last_traffic_s = 0.0
        self._last_served = 0
        self._plan_edges_cache = None

        self.bus.subscribe(TRAFFIC, self._on_traffic, owner=self)
        self.gateway = InterworkingGateway(self.bus, self.plan_edges)
        self.bus.subscribe(GATEWAY_OUT, self._on_alert, owner=self)

    # ---------- Bus Handlers ----------

    def _on_traffic(self, message):
        self._last_traffic_s = max(self._last_traffic_s, message.timestamp_s)
        try:
            self.world.overlay = apply_event(self.world.overlay, message.payload)
        except TrafficEventError as e:
            log.warning("[WARN] Ignored traffic event: %s", e)
            self.world.rejected_events += 1

    def _on_alert(self, message):
        self.world.gateway_alerts += 1

    def plan_edges(self):
        """Edges any vehicle is on or still has to traverse."""
        if self._plan_edges_cache is None:
            edges = set()
            for v in self.world.vehicles.values():
                prev = v.node
                if v.edge_id is not None:
                    edges.add(v.edge_id)
                    prev = self.graph.edges[v.edge_id].target
                for node in v.route:
                    edges.add(self.graph.edge_between(prev, node))
                    prev = node
            self._plan_edges_cache = edges
        return self._plan_edges_cache

    # ---------- Step ----------

    def step(self):
        world = self.world
        clock = world.clock
        if world.step_index >= clock.total_ticks:
            raise ValueError(f"simulation already reached its horizon ({clock.horizon_s} s)")
        k = world.step_index
        now = k * clock.tick_s
        end = (k + 1) * clock.tick_s
        self._plan_edges_cache = None

        while self._traffic and self._traffic[0].timestamp_s < end:
            event = self._traffic.popleft()
            try:
                validate_event(world.overlay, event)
            except TrafficEventError as e:
                log.warning("[WARN] Dropped traffic event: %s", e)
                world.rejected_events += 1
                continue
            self.bus.publish(TRAFFIC, event, max(event.timestamp_s, self._last_traffic_s))

        reports = []
        for vehicle in world.vehicles.values():
            self._advance(vehicle, now, clock.tick_s, reports)
        self._plan_edges_cache = None
        reports.sort(key=lambda r: r[:3])
        for t, _, _, telemetry in reports:
            self.bus.publish(TELEMETRY, telemetry, t)
            if telemetry.detected is not None:
                self.bus.publish(GATEWAY_IN, telemetry.detected, telemetry.detected.timestamp_s)

        world.step_index = k + 1
        world.clock = replace(clock, now_s=end)
        if world.step_index % self._ticks_per_telemetry == 0:
            for v in world.vehicles.values():
                self.bus.publish(TELEMETRY, VehicleTelemetry(v.vehicle_id, v.edge_id, v.fraction(self.graph),
                                                             min(len(v.onboard), v.capacity), v.capacity), end)
        if world.step_index % clock.ticks_per_batch == 0:
            self._dispatch(end)
        if world.step_index % self._ticks_per_sample == 0:
            self._sample(end)
        if self.config.check_invariants:
            self._check_invariants(end)
        return world

    def _advance(self, v, now, tick, reports):
        overlay = self.world.overlay
        remaining = tick
        start = Position(v.node, v.edge_id, v.offset_m)
        trail = []
        while True:
            if v.edge_id is None:
                t = now + (tick - remaining)
                self._fire_stops(v, t, reports)
                if v.plan.is_empty:
                    v.route = []
                    break
                if not v.route and not self._reroute(v):
                    break
                edge_id = self.graph.edge_between(v.node, v.route[0])
                speed = overlay.speed(edge_id)
                if speed <= 0:
                    if not self._reroute(v):
                        break
                    continue
                v.edge_id = edge_id
                v.offset_m = 0.0
                v.route.pop(0)
                trail.append(edge_id)
                if speed < self.config.detect_ratio * self.graph.edges[edge_id].speed_mps:
                    detected = TrafficEvent(edge_id, speed, max(t, self._last_traffic_s), v.vehicle_id)
                    reports.append((t, v.vehicle_id, len(reports),
                                    VehicleTelemetry(v.vehicle_id, edge_id, 0.0, min(len(v.onboard), v.capacity), v.capacity,
                                                     "congestion", None, detected)))
            if remaining <= 0:
                break
            edge = self.graph.edges[v.edge_id]
            speed = overlay.speed(v.edge_id)
            if speed <= 0:
                break
            to_end = (edge.length_m - v.offset_m) / speed
            if to_end <= remaining:
                remaining -= to_end
                v.node = edge.target
                v.edge_id = None
                v.offset_m = 0.0
            else:
                v.offset_m += speed * remaining
                remaining = 0.0
                break

        if v.is_idle:
            v.status = IDLE
        else:
            v.status = DRIVING if v.edge_id is not None else AT_STOP
        if self.config.check_invariants:
            end = Position(v.node, v.edge_id, v.offset_m)
            for problem in check_continuity(self.graph, overlay, start, trail, end, tick):
                self._violation(now, f"{v.vehicle_id} {problem}")
            if v.edge_id is not None and v.offset_m > self.graph.edges[v.edge_id].length_m + CONTINUITY_TOL_M:
                self._violation(now, f"{v.vehicle_id} overran edge {v.edge_id}")

    def _fire_stops(self, v, t, reports):
        while v.plan.stops and v.plan.stops[0].node == v.node:
            stop = v.plan.stops[0]
            status = self.world.requests[stop.request_id]
            if stop.kind == PICKUP:
                v.onboard.append(stop.request_id)
                self._transition(status, ONBOARD, t)
            else:
                v.onboard.remove(stop.request_id)
                self._transition(status, SERVED, t)
                self.world.detours.append(self._detour(status, t))
            v.plan = make_plan(v.plan.stops[1:], len(v.onboard))
            reports.append((t, v.vehicle_id, len(reports),
                            VehicleTelemetry(v.vehicle_id, None, 0.0, min(len(v.onboard), v.capacity), v.capacity,
                                             stop.kind, stop.request_id)))

    def _detour(self, status, t):
        direct = status.direct_live_s if self.config.detour_baseline == "live" else status.direct_freeflow_s
        preferred = status.request.submission_s + direct
        return DetourRecord(status.request_id, preferred, t, t - preferred)

    def _route_through(self, start, stops, oracle):
        nodes = []
        prev = start
        for stop in stops:
            leg = oracle.path(prev, stop.node)
            if leg is None:
                return None
            nodes.extend(leg[1:])
            prev = stop.node
        return nodes

    def _reroute(self, v):
        """Re-plan the geometry on live speeds; blocked edges are avoided."""
        oracle = self.graph.oracle(self.world.overlay, LIVE)
        route = self._route_through(v.node, v.plan.stops, oracle)
        if route is None:
            log.debug("[DEBUG] %s has no open route at %s, holding", v.vehicle_id, v.node)
            return False
        v.route = route
        self.world.reroutes += 1
        self._plan_edges_cache = None
        return bool(route)

    # ---------- Dispatch ----------

    def _dispatch(self, now):
        world = self.world
        freeflow = self.graph.oracle(None, FREEFLOW)
        live = self.graph.oracle(world.overlay, LIVE)
        new = []
        while self._pending and self._pending[0].submission_s < now:
            request = self._pending.popleft()
            if request.origin_node is None or request.dest_node is None:
                request = request.mapped(self.graph)
            status = RequestStatus(request, now,
                                   direct_freeflow_s=freeflow.time(request.origin_node, request.dest_node),
                                   direct_live_s=live.time(request.origin_node, request.dest_node))
            world.requests[request.request_id] = status
            world.status_counts[WAITING] += 1
            self.bus.publish(REQUESTS, request, request.submission_s)
            new.append(request)

        pool = [world.requests[rid].request for rid in world.waiting]
        window = collect_batch(now, new, pool, world.clock.batch_s)
        oracle = self.graph.oracle(world.overlay, self.scheduler_mode)
        outcome = dispatch_batch(window, world.vehicles.values(), oracle, now, self.dispatch_config)
        kept, unrouted = [], []
        for commitment in outcome.committed:
            if self._commit(commitment, oracle, now):
                kept.append(commitment)
            else:
                unrouted.append(commitment.request_id)
        if unrouted:
            outcome = replace(outcome, committed=kept, waiting=outcome.waiting + unrouted)
        publish_outcome(self.bus, outcome, now)
        world.waiting = outcome.waiting
        world.diagnostics.append(dict(outcome.diagnostics, t_s=now))
        self._plan_edges_cache = None

    def _commit(self, commitment, oracle, now):
        v = self.world.vehicles[commitment.vehicle_id]
        anchor = self.graph.edges[v.edge_id].target if v.edge_id is not None else v.node
        route = self._route_through(anchor, commitment.plan.stops, oracle)
        if route is None:
            log.error("[ERROR] No route for committed plan of %s, %s goes back to waiting",
                      v.vehicle_id, commitment.request_id)
            return False
        v.route = route
        v.plan = commitment.plan
        if v.status == IDLE:
            v.status = AT_STOP
        status = self.world.requests[commitment.request_id]
        self._transition(status, ASSIGNED, now)
        status.vehicle_id = v.vehicle_id
        status.rebalanced = commitment.rebalanced
        self.world.commitments.append((now, v.vehicle_id, commitment.request_id, commitment.rebalanced))
        return True

    # ---------- Bookkeeping ----------

    def _transition(self, status, new_status, t):
        old = status.status
        status.advance(new_status, t)
        self.world.status_counts[old] -= 1
        self.world.status_counts[new_status] += 1

    def _sample(self, t):
        kpi = sample(self.world, t)
        self.world.samples.append(kpi)
        recount = (kpi.waiting, kpi.assigned, kpi.onboard, kpi.served)
        tracked = tuple(self.world.status_counts[s] for s in REQUEST_STATES)
        if self.config.check_invariants and recount != tracked:
            self._violation(t, f"status counts drifted: sampled {recount}, tracked {tracked}")

    def _check_invariants(self, t):
        world = self.world
        for v in world.vehicles.values():
            if len(v.onboard) > v.capacity:
                self._violation(t, f"{v.vehicle_id} carries {len(v.onboard)} > {v.capacity}")
        if sum(world.status_counts[s] for s in REQUEST_STATES) != world.injected:
            self._violation(t, f"status partition does not add up to {world.injected} injected")
        served = world.status_counts[SERVED]
        if served < self._last_served:
            self._violation(t, f"served count fell from {self._last_served} to {served}")
        self._last_served = served

    def _violation(self, t, message):
        log.error("[ERROR] Invariant violated at t=%.1f: %s", t, message)
        self.world.violations.append(f"t={t:.1f}: {message}")

    # ---------- Run ----------

    def run(self, progress=False):
        started = time.perf_counter()
        world = self.world
        remaining = world.clock.total_ticks - world.step_index
        for _ in tqdm(range(remaining), desc=f"simulate {self.config.mode}", unit="tick", disable=not progress):
            self.step()
        world.runtime_s = time.perf_counter() - started
        log.info("[INFO] Run %s finished: %d injected, %d served, %d waiting (%.1f s)",
                 self.config.mode, world.injected, world.status_counts[SERVED], world.status_counts[WAITING],
                 world.runtime_s)
        if world.violations:
            log.warning("[WARN] %d invariant violations recorded", len(world.violations))
        return world
