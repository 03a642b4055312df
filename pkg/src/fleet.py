import math
from dataclasses import dataclass, field
from typing import List, Optional

from darp_routes import RoutePlan, VehicleAnchor
from demand import TripRequest

IDLE = "idle"
DRIVING = "driving"
AT_STOP = "at-stop"

WAITING = "waiting"
ASSIGNED = "assigned"
ONBOARD = "onboard"
SERVED = "served"
REQUEST_STATES = (WAITING, ASSIGNED, ONBOARD, SERVED)
_NEXT = {WAITING: ASSIGNED, ASSIGNED: ONBOARD, ONBOARD: SERVED}


@dataclass
class VehicleState:
    vehicle_id: str
    node: str
    capacity: int = 4
    edge_id: Optional[str] = None
    offset_m: float = 0.0
    onboard: List[str] = field(default_factory=list)
    plan: RoutePlan = field(default_factory=RoutePlan)
    route: List[str] = field(default_factory=list)
    status: str = IDLE

    @property
    def is_idle(self):
        return self.plan.is_empty and not self.onboard

    def fraction(self, graph):
        if self.edge_id is None:
            return 0.0
        return self.offset_m / graph.edges[self.edge_id].length_m

    def anchor(self, oracle, now):
        """Next node the vehicle can turn at and when it gets there, estimated with oracle's speeds."""
        if self.edge_id is None:
            return VehicleAnchor(self.vehicle_id, self.node, now, self.capacity, tuple(self.onboard))
        edge = oracle.graph.edges[self.edge_id]
        speed = oracle.edge_speed(self.edge_id)
        if speed <= 0:
            return None
        ready = now + (edge.length_m - self.offset_m) / speed
        return VehicleAnchor(self.vehicle_id, edge.target, ready, self.capacity, tuple(self.onboard))


@dataclass
class RequestStatus:
    request: TripRequest
    injected_s: float
    status: str = WAITING
    assigned_s: Optional[float] = None
    pickup_s: Optional[float] = None
    dropoff_s: Optional[float] = None
    vehicle_id: Optional[str] = None
    rebalanced: bool = False
    direct_freeflow_s: float = math.nan
    direct_live_s: float = math.nan
    history: list = field(default_factory=list)

    def __post_init__(self):
        if not self.history:
            self.history.append((WAITING, self.injected_s))

    @property
    def request_id(self):
        return self.request.request_id

    def advance(self, new_status, now):
        if _NEXT.get(self.status) != new_status:
            raise ValueError(f"request {self.request_id}: illegal transition {self.status} -> {new_status}")
        self.status = new_status
        self.history.append((new_status, now))
        if new_status == ASSIGNED:
            self.assigned_s = now
        elif new_status == ONBOARD:
            self.pickup_s = now
        else:
            self.dropoff_s = now
