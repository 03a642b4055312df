import os
import json
import math
import logging
import itertools
from collections import namedtuple, OrderedDict
from dataclasses import dataclass

import numpy as np
import networkx as nx

EARTH_RADIUS_M = 6_371_000.0
LIVE = "live"
FREEFLOW = "freeflow"
DEFAULT_PLAUSIBILITY_FACTOR = 2.0


class GraphFormatError(ValueError):
    pass


class ConnectivityError(ValueError):
    pass


class TrafficEventError(ValueError):
    pass


class BoundingBox(namedtuple("BoundingBox", ["north", "east", "south", "west"])):
    """NE corner (north, east) and SW corner (south, west), degrees."""
    __slots__ = ()

    @property
    def is_degenerate(self):
        return not (self.north > self.south and self.east > self.west)

    def contains(self, lat, lon):
        return self.south <= lat <= self.north and self.west <= lon <= self.east


Edge = namedtuple("Edge", ["edge_id", "source", "target", "length_m", "speed_mps"])


@dataclass(frozen=True)
class TrafficEvent:
    edge_id: str
    speed_mps: float
    timestamp_s: float
    source: str

    @property
    def order_key(self):
        return (self.timestamp_s, self.source, self.speed_mps)


def haversine_m(lat1, lon1, lat2, lon2):
    """Great-circle distance in meters; accepts scalars or numpy arrays."""
    lat1, lon1, lat2, lon2 = map(np.radians, (lat1, lon1, lat2, lon2))
    a = np.sin((lat2 - lat1) / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.minimum(a, 1.0)))


# ---------- Road Graph ----------

class RoadGraph:
    def __init__(self, nodes, edges, check_connectivity=True):
        self.nodes = OrderedDict()
        self.edges = OrderedDict()
        self.digraph = nx.DiGraph()
        self._pairs = {}
        self._oracles = OrderedDict()

        for i, (node_id, lat, lon) in enumerate(nodes):
            if node_id in self.nodes:
                raise GraphFormatError(f"nodes[{i}].id: duplicate node '{node_id}'")
            self.nodes[node_id] = (float(lat), float(lon))
            self.digraph.add_node(node_id)

        for i, raw in enumerate(edges):
            edge = Edge(*raw)
            edge = edge._replace(length_m=float(edge.length_m), speed_mps=float(edge.speed_mps))
            if edge.edge_id in self.edges:
                raise GraphFormatError(f"edges[{i}].id: duplicate edge '{edge.edge_id}'")
            for field in ("source", "target"):
                if getattr(edge, field) not in self.nodes:
                    key = "from" if field == "source" else "to"
                    raise GraphFormatError(
                        f"edges[{i}].{key}: edge '{edge.edge_id}' references missing node '{getattr(edge, field)}'")
            if not edge.length_m > 0:
                raise GraphFormatError(f"edges[{i}].length_m: must be > 0, got {edge.length_m}")
            if not edge.speed_mps > 0:
                raise GraphFormatError(f"edges[{i}].speed_mps: must be > 0, got {edge.speed_mps}")
            if (edge.source, edge.target) in self._pairs:
                raise GraphFormatError(
                    f"edges[{i}]: second edge from '{edge.source}' to '{edge.target}'")
            self.edges[edge.edge_id] = edge
            self._pairs[(edge.source, edge.target)] = edge.edge_id
            self.digraph.add_edge(edge.source, edge.target, edge_id=edge.edge_id,
                                  length_m=edge.length_m, speed_mps=edge.speed_mps)

        if not self.nodes:
            raise GraphFormatError("graph has no nodes")

        self._sorted_ids = sorted(self.nodes)
        self._lats = np.array([self.nodes[n][0] for n in self._sorted_ids])
        self._lons = np.array([self.nodes[n][1] for n in self._sorted_ids])

        if check_connectivity:
            self.check_strongly_connected()

    def check_strongly_connected(self):
        if nx.is_strongly_connected(self.digraph):
            return
        root = self._sorted_ids[0]
        reached = nx.descendants(self.digraph, root) | {root}
        for node in self._sorted_ids:
            if node not in reached:
                raise ConnectivityError(f"node '{node}' is unreachable from '{root}'")
        reaching = nx.ancestors(self.digraph, root) | {root}
        for node in self._sorted_ids:
            if node not in reaching:
                raise ConnectivityError(f"node '{root}' is unreachable from '{node}'")

    def edge_between(self, u, v):
        return self._pairs.get((u, v))

    def oracle(self, overlay=None, mode=LIVE):
        """Travel-time oracle for one overlay snapshot, reused until the overlay changes."""
        live = mode == LIVE and overlay is not None
        key = (LIVE, overlay.version) if live else (FREEFLOW,)
        oracle = self._oracles.get(key)
        if oracle is None:
            oracle = TravelTimeOracle(self, overlay if live else None)
            self._oracles[key] = oracle
            while len(self._oracles) > 4:
                self._oracles.popitem(last=False)
        return oracle

    def __eq__(self, other):
        return isinstance(other, RoadGraph) and self.nodes == other.nodes and self.edges == other.edges

    def __repr__(self):
        return f"RoadGraph(nodes={len(self.nodes)}, edges={len(self.edges)})"


def load_graph(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"Missing graph file: {path}")
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise GraphFormatError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e

    if not isinstance(doc, dict) or "nodes" not in doc or "edges" not in doc:
        raise GraphFormatError(f"{path}: expected an object with 'nodes' and 'edges' arrays")

    def field(kind, i, record, key, cast):
        try:
            return cast(record[key])
        except KeyError:
            raise GraphFormatError(f"{path}: {kind}[{i}].{key}: missing") from None
        except (TypeError, ValueError):
            raise GraphFormatError(f"{path}: {kind}[{i}].{key}: invalid value {record[key]!r}") from None

    nodes = [(field("nodes", i, n, "id", str), field("nodes", i, n, "lat", float), field("nodes", i, n, "lon", float))
             for i, n in enumerate(doc["nodes"])]
    edges = [(field("edges", i, e, "id", str), field("edges", i, e, "from", str), field("edges", i, e, "to", str),
              field("edges", i, e, "length_m", float), field("edges", i, e, "speed_mps", float))
             for i, e in enumerate(doc["edges"])]
    try:
        graph = RoadGraph(nodes, edges)
    except GraphFormatError as e:
        raise GraphFormatError(f"{path}: {e}") from None
    logging.getLogger().info("[INFO] Loaded graph %s: %d nodes, %d edges", path, len(graph.nodes), len(graph.edges))
    return graph


def save_graph(graph, path):
    doc = {
        "nodes": [{"id": n, "lat": lat, "lon": lon} for n, (lat, lon) in graph.nodes.items()],
        "edges": [{"id": e.edge_id, "from": e.source, "to": e.target, "length_m": e.length_m, "speed_mps": e.speed_mps}
                  for e in graph.edges.values()],
    }
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
    logging.getLogger().info("[INFO] Saved graph: %s", path)


# ---------- Synthetic Grid ----------

def generate_grid_graph(bbox, spacing_m, default_speed_mps, corridors=()):
    """Planar grid spanning bbox with bidirectional edges; corridor node paths get their own speed."""
    bbox = BoundingBox(*bbox)
    if bbox.is_degenerate:
        raise GraphFormatError(f"degenerate bounding box {tuple(bbox)}")
    if not spacing_m > 0:
        raise GraphFormatError(f"grid spacing must be > 0, got {spacing_m}")
    if not default_speed_mps > 0:
        raise GraphFormatError(f"default speed must be > 0, got {default_speed_mps}")

    mid_lat = (bbox.north + bbox.south) / 2.0
    height = float(haversine_m(bbox.south, bbox.west, bbox.north, bbox.west))
    width = float(haversine_m(mid_lat, bbox.west, mid_lat, bbox.east))
    n_rows = max(2, math.ceil(height / spacing_m - 1e-9) + 1)
    n_cols = max(2, math.ceil(width / spacing_m - 1e-9) + 1)
    lats = np.linspace(bbox.south, bbox.north, n_rows)
    lons = np.linspace(bbox.west, bbox.east, n_cols)

    def node_id(r, c):
        return f"n{r:04d}_{c:04d}"

    nodes = [(node_id(r, c), float(lats[r]), float(lons[c])) for r in range(n_rows) for c in range(n_cols)]
    edges = []
    counter = itertools.count()
    for r in range(n_rows):
        for c in range(n_cols):
            for dr, dc in ((0, 1), (1, 0)):
                r2, c2 = r + dr, c + dc
                if r2 >= n_rows or c2 >= n_cols:
                    continue
                length = float(haversine_m(lats[r], lons[c], lats[r2], lons[c2]))
                a, b = node_id(r, c), node_id(r2, c2)
                edges.append(Edge(f"e{next(counter):06d}", a, b, length, float(default_speed_mps)))
                edges.append(Edge(f"e{next(counter):06d}", b, a, length, float(default_speed_mps)))

    edges = _apply_corridors(edges, corridors)
    logging.getLogger().debug("[DEBUG] Grid %dx%d (%.0f m x %.0f m), %d edges", n_rows, n_cols, height, width, len(edges))
    return RoadGraph(nodes, edges)


def _apply_corridors(edges, corridors):
    if not corridors:
        return edges
    by_pair = {(e.source, e.target): i for i, e in enumerate(edges)}
    edges = list(edges)
    for path, speed in corridors:
        if not speed > 0:
            raise GraphFormatError(f"corridor speed must be > 0, got {speed}")
        for a, b in zip(path, path[1:]):
            if (a, b) not in by_pair or (b, a) not in by_pair:
                raise GraphFormatError(f"corridor step {a} -> {b} is not a grid edge")
            for pair in ((a, b), (b, a)):
                i = by_pair[pair]
                edges[i] = edges[i]._replace(speed_mps=float(speed))
    return edges


def corridor_path(graph, start, end):
    """Fewest-hop node path between the nodes nearest to two (lat, lon) points."""
    source = nearest_node(graph, *start)
    target = nearest_node(graph, *end)
    return nx.shortest_path(graph.digraph, source, target)


def ring_path(graph, bbox):
    """Closed node loop following the boundary of bbox (SW -> SE -> NE -> NW -> SW)."""
    bbox = BoundingBox(*bbox)
    corners = [(bbox.south, bbox.west), (bbox.south, bbox.east), (bbox.north, bbox.east),
               (bbox.north, bbox.west), (bbox.south, bbox.west)]
    loop = [nearest_node(graph, *corners[0])]
    for a, b in zip(corners, corners[1:]):
        segment = corridor_path(graph, a, b)
        loop.extend(segment[1:])
    return loop


def nearest_node(graph, lat, lon):
    distances = haversine_m(lat, lon, graph._lats, graph._lons)
    return graph._sorted_ids[int(np.argmin(distances))]


# ---------- Live Speed Overlay ----------

class SpeedOverlay:
    """Effective edge speeds; immutable, every applied event yields a new snapshot."""
    _versions = itertools.count()

    def __init__(self, graph, plausibility_factor=DEFAULT_PLAUSIBILITY_FACTOR, speeds=None, stamps=None,
                 version=None):
        self.graph = graph
        self.plausibility_factor = plausibility_factor
        self._speeds = dict(speeds or {})
        self._stamps = dict(stamps or {})
        # version identifies the speed content; stamps alone do not change it
        self.version = next(SpeedOverlay._versions) if version is None else version

    def speed(self, edge_id):
        speed = self._speeds.get(edge_id)
        return self.graph.edges[edge_id].speed_mps if speed is None else speed

    def last_event(self, edge_id):
        return self._stamps.get(edge_id)

    @property
    def overrides(self):
        return dict(self._speeds)


def validate_event(overlay, event):
    edge = overlay.graph.edges.get(event.edge_id)
    if edge is None:
        raise TrafficEventError(f"unknown edge '{event.edge_id}'")
    if event.timestamp_s < 0:
        raise TrafficEventError(f"negative timestamp {event.timestamp_s} on edge '{event.edge_id}'")
    if event.speed_mps < 0:
        raise TrafficEventError(f"negative speed {event.speed_mps} on edge '{event.edge_id}'")
    limit = overlay.plausibility_factor * edge.speed_mps
    if event.speed_mps > limit:
        raise TrafficEventError(
            f"implausible speed {event.speed_mps:.2f} m/s on edge '{event.edge_id}' (limit {limit:.2f})")


def apply_event(overlay, event):
    """Latest observation wins; equal timestamps resolve by source tag, then speed."""
    validate_event(overlay, event)
    previous = overlay._stamps.get(event.edge_id)
    if previous is not None and previous.order_key >= event.order_key:
        return overlay
    unchanged = overlay.speed(event.edge_id) == float(event.speed_mps)
    speeds = dict(overlay._speeds)
    stamps = dict(overlay._stamps)
    speeds[event.edge_id] = float(event.speed_mps)
    stamps[event.edge_id] = event
    return SpeedOverlay(overlay.graph, overlay.plausibility_factor, speeds, stamps,
                        version=overlay.version if unchanged else None)


def apply_events(overlay, events):
    for event in sorted(events, key=lambda e: (e.timestamp_s, e.source, e.edge_id)):
        overlay = apply_event(overlay, event)
    return overlay


# ---------- Travel Times ----------

class TravelTimeOracle:
    """Shortest-path travel times over one speed snapshot (freeflow when overlay is None)."""

    def __init__(self, graph, overlay=None):
        self.graph = graph
        self.mode = FREEFLOW if overlay is None else LIVE
        speeds = {} if overlay is None else overlay.overrides
        self._speeds = speeds

        def weight(u, v, d):
            speed = speeds.get(d["edge_id"], d["speed_mps"])
            if speed <= 0:
                return None
            return d["length_m"] / speed

        self._weight = weight
        self._forward = {}
        self._backward = {}

    def edge_speed(self, edge_id):
        speed = self._speeds.get(edge_id)
        return self.graph.edges[edge_id].speed_mps if speed is None else speed

    def _check(self, node):
        if node not in self.graph.nodes:
            raise KeyError(f"unknown node '{node}'")

    def _search(self, source):
        found = self._forward.get(source)
        if found is None:
            self._check(source)
            found = nx.dijkstra_predecessor_and_distance(self.graph.digraph, source, weight=self._weight)
            self._forward[source] = found
        return found

    def time(self, u, v):
        """Seconds from u to v; math.inf when blocked edges disconnect them."""
        if u == v:
            self._check(u)
            return 0.0
        self._check(v)
        return self._search(u)[1].get(v, math.inf)

    def times_to(self, target):
        """Seconds from every node to target (reverse single-target search)."""
        found = self._backward.get(target)
        if found is None:
            self._check(target)
            found = nx.single_source_dijkstra_path_length(
                self.graph.digraph.reverse(copy=False), target, weight=self._weight)
            self._backward[target] = found
        return found

    def path(self, u, v):
        """Node path from u to v, or None when unreachable."""
        if u == v:
            return [u]
        pred, dist = self._search(u)
        if v not in dist:
            return None
        nodes = [v]
        while nodes[-1] != u:
            nodes.append(pred[nodes[-1]][0])
        nodes.reverse()
        return nodes


def travel_time(graph, overlay, from_node, to_node, mode=LIVE):
    """Shortest travel time; overlay None or mode FREEFLOW uses free-flow speeds."""
    return graph.oracle(overlay, mode).time(from_node, to_node)
