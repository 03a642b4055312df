import os
import json
import math
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from road_network import BoundingBox, nearest_node

REGION_CODES = ("E", "L", "H", "N", "G", "W")
DEFAULT_MAX_WAIT_S = 420.0
PROBABILITY_TOLERANCE = 1e-9
# point draws in the destination box before falling back to a graph node
POINT_ATTEMPTS = 20

# Brainport areas of interest: NE corner, SW corner, vehicle-init, origin, destination row (E, L, H, N, G, W).
BRAINPORT_TABLE = [
    ("E", (51.4584, 5.5157), (51.4154, 5.4453), 0.30, 0.30, (0.30, 0.30, 0.05, 0.15, 0.15, 0.05)),
    ("L", (51.4927, 5.5323), (51.4106, 5.4310), 0.20, 0.20, (0.03, 0.30, 0.05, 0.15, 0.15, 0.05)),
    ("H", (51.5016, 5.7155), (51.4511, 5.6008), 0.20, 0.20, (0.10, 0.10, 0.60, 0.05, 0.05, 0.10)),
    ("N", (51.4814, 5.5756), (51.4566, 5.5302), 0.10, 0.10, (0.30, 0.30, 0.05, 0.20, 0.05, 0.10)),
    ("G", (51.4366, 5.5831), (51.4068, 5.5342), 0.10, 0.10, (0.30, 0.30, 0.05, 0.05, 0.20, 0.10)),
    ("W", (51.5021, 5.7249), (51.4018, 5.3950), 0.10, 0.10, (0.30, 0.20, 0.20, 0.10, 0.10, 0.10)),
]


class RegionTableError(ValueError):
    pass


@dataclass(frozen=True)
class Region:
    code: str
    bbox: BoundingBox
    vehicle_prob: float
    origin_prob: float
    destination_raw: Tuple[float, ...]
    destination: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.bbox.is_degenerate:
            raise RegionTableError(f"region {self.code}: NE corner must lie north-east of SW corner")
        if len(self.destination_raw) != len(REGION_CODES):
            raise RegionTableError(f"region {self.code}: destination row needs {len(REGION_CODES)} entries")
        if not self.destination:
            object.__setattr__(self, "destination", renormalize(self.destination_raw))


def renormalize(row):
    total = math.fsum(row)
    if total <= 0:
        raise RegionTableError(f"destination row {row} has no mass")
    if math.isclose(total, 1.0, rel_tol=0.0, abs_tol=1e-12):
        return tuple(float(p) for p in row)
    return tuple(float(p) / total for p in row)


def _check_column(regions, attr):
    total = math.fsum(getattr(r, attr) for r in regions)
    if abs(total - 1.0) > PROBABILITY_TOLERANCE:
        raise RegionTableError(f"{attr} probabilities sum to {total}, expected 1")


def validate_regions(regions):
    codes = [r.code for r in regions]
    if len(set(codes)) != len(codes):
        raise RegionTableError(f"duplicate region codes in {codes}")
    if len(regions) != len(regions[0].destination_raw):
        raise RegionTableError("destination rows must have one entry per region")
    _check_column(regions, "vehicle_prob")
    _check_column(regions, "origin_prob")
    for r in regions:
        if any(p < 0 for p in (r.vehicle_prob, r.origin_prob, *r.destination_raw)):
            raise RegionTableError(f"region {r.code}: negative probability")
    return regions


def builtin_regions():
    regions = [Region(code, BoundingBox(ne[0], ne[1], sw[0], sw[1]), veh, orig, dest)
               for code, ne, sw, veh, orig, dest in BRAINPORT_TABLE]
    return validate_regions(regions)


def load_regions(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"Missing region table: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise RegionTableError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
    regions = []
    for i, row in enumerate(doc.get("regions", [])):
        try:
            ne, sw = row["ne"], row["sw"]
            regions.append(Region(str(row["code"]), BoundingBox(ne[0], ne[1], sw[0], sw[1]),
                                  float(row["vehicle"]), float(row["origin"]),
                                  tuple(float(p) for p in row["destination"])))
        except (KeyError, IndexError, TypeError, ValueError) as e:
            raise RegionTableError(f"{path}: regions[{i}]: {e}") from None
    if not regions:
        raise RegionTableError(f"{path}: no regions")
    return validate_regions(regions)


# ---------- Requests ----------

@dataclass(frozen=True)
class TripRequest:
    request_id: str
    origin_lat: float
    origin_lon: float
    dest_lat: float
    dest_lon: float
    submission_s: float
    pickup_deadline_s: float
    party_size: int = 1
    origin_node: Optional[str] = None
    dest_node: Optional[str] = None

    def __post_init__(self):
        if not self.pickup_deadline_s > self.submission_s:
            raise ValueError(f"request {self.request_id}: pickup deadline must follow submission")

    @property
    def max_wait_s(self):
        return self.pickup_deadline_s - self.submission_s

    def mapped(self, graph):
        return replace(self, origin_node=nearest_node(graph, self.origin_lat, self.origin_lon),
                       dest_node=nearest_node(graph, self.dest_lat, self.dest_lon))


@dataclass
class RequestTrace:
    requests: List[TripRequest]
    seed: int
    horizon_s: float
    window_s: float = 10.0
    max_wait_s: float = DEFAULT_MAX_WAIT_S
    region_codes: List[str] = field(default_factory=list)


def _uniform_points(rng, boxes, picks):
    n = len(picks)
    south = np.array([b.south for b in boxes])[picks]
    north = np.array([b.north for b in boxes])[picks]
    west = np.array([b.west for b in boxes])[picks]
    east = np.array([b.east for b in boxes])[picks]
    return rng.uniform(south, north, n), rng.uniform(west, east, n)


def _node_apart(rng, graph, box, origin_node):
    """Coordinates of a random graph node other than origin_node, inside box when the box holds one."""
    others = [n for n in graph.nodes if n != origin_node]
    inside = [n for n in others if box.contains(*graph.nodes[n])]
    for pool in (inside, others):
        pool = list(pool)
        while pool:
            lat, lon = graph.nodes[pool.pop(int(rng.integers(len(pool))))]
            # nodes sharing coordinates snap to the lowest id
            if nearest_node(graph, lat, lon) != origin_node:
                return float(lat), float(lon)
    raise ValueError(f"cannot place destination apart from origin node {origin_node}")


def generate_trace(regions, horizon_s, requests_per_window=(1, 4), window_s=10.0, seed=0,
                   max_wait_s=DEFAULT_MAX_WAIT_S, graph=None):
    """Offline request trace: per window a uniform count, regions from the origin/destination model."""
    logger = logging.getLogger()
    lo, hi = requests_per_window
    if not window_s > 0:
        raise ValueError(f"window must be > 0, got {window_s}")
    if lo > hi or lo < 0:
        raise ValueError(f"empty requests-per-window range {requests_per_window}")
    n_windows = horizon_s / window_s
    if abs(n_windows - round(n_windows)) > 1e-9:
        raise ValueError(f"horizon {horizon_s} is not a multiple of window {window_s}")
    n_windows = int(round(n_windows))

    rng = np.random.default_rng(seed)
    boxes = [r.bbox for r in regions]
    origin_p = np.array([r.origin_prob for r in regions])
    dest_cum = np.cumsum(np.array([r.destination for r in regions]), axis=1)

    counts = rng.integers(lo, hi + 1, size=n_windows)
    n = int(counts.sum())
    window_idx = np.repeat(np.arange(n_windows), counts)
    offsets = rng.uniform(0.0, window_s, n)
    origins = rng.choice(len(regions), size=n, p=origin_p / origin_p.sum())
    draws = rng.random(n)
    dests = np.minimum((draws[:, None] >= dest_cum[origins]).sum(axis=1), len(regions) - 1)
    o_lat, o_lon = _uniform_points(rng, boxes, origins)
    d_lat, d_lon = _uniform_points(rng, boxes, dests)

    order = np.lexsort((offsets, window_idx))
    submissions = window_idx * window_s + offsets

    requests = []
    resampled = 0
    for k, i in enumerate(order):
        dlat, dlon = float(d_lat[i]), float(d_lon[i])
        if graph is not None:
            origin_node = nearest_node(graph, o_lat[i], o_lon[i])
            box = boxes[dests[i]]
            attempts = 0
            while nearest_node(graph, dlat, dlon) == origin_node:
                attempts += 1
                if attempts > POINT_ATTEMPTS:
                    dlat, dlon = _node_apart(rng, graph, box, origin_node)
                    break
                dlat, dlon = float(rng.uniform(box.south, box.north)), float(rng.uniform(box.west, box.east))
            resampled += attempts
        sub = float(submissions[i])
        requests.append(TripRequest(f"r{k:06d}", float(o_lat[i]), float(o_lon[i]), dlat, dlon,
                                    sub, sub + max_wait_s))

    logger.info("[INFO] Generated %d requests over %d windows (seed %s, %d destinations resampled)",
                len(requests), n_windows, seed, resampled)
    return RequestTrace(requests, seed, float(horizon_s), float(window_s), float(max_wait_s),
                        [regions[o].code for o in origins[order]])


def init_vehicle_positions(regions, fleet_size, seed, with_regions=False):
    """Initial vehicle (lat, lon) points; with_regions also returns the sampled region codes."""
    if fleet_size < 1:
        raise ValueError(f"fleet size must be >= 1, got {fleet_size}")
    rng = np.random.default_rng(seed)
    probs = np.array([r.vehicle_prob for r in regions])
    picks = rng.choice(len(regions), size=fleet_size, p=probs / probs.sum())
    lats, lons = _uniform_points(rng, [r.bbox for r in regions], picks)
    positions = [(float(a), float(b)) for a, b in zip(lats, lons)]
    if with_regions:
        return positions, [regions[p].code for p in picks]
    return positions
