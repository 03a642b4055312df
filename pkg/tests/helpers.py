"""Brute-force oracles and random instance builders shared by the test modules."""

import itertools
import math

import numpy as np

from road_network import Edge, RoadGraph


def random_graph(rng, n_nodes, extra_edges=None):
    """Strongly connected random graph: a directed ring plus random chords."""
    nodes = [(f"n{i:03d}", 51.4 + 0.01 * rng.random(), 5.4 + 0.01 * rng.random()) for i in range(n_nodes)]
    pairs = {(i, (i + 1) % n_nodes) for i in range(n_nodes)}
    extra = n_nodes * 2 if extra_edges is None else extra_edges
    for _ in range(extra):
        a, b = (int(x) for x in rng.integers(0, n_nodes, size=2))
        if a != b:
            pairs.add((a, b))
    edges = [Edge(f"e{k:04d}", nodes[a][0], nodes[b][0], float(rng.uniform(50, 2000)), float(rng.uniform(5, 30)))
             for k, (a, b) in enumerate(sorted(pairs))]
    return RoadGraph(nodes, edges)


def floyd_warshall(graph, speeds=None):
    speeds = speeds or {}
    ids = list(graph.nodes)
    index = {n: i for i, n in enumerate(ids)}
    dist = np.full((len(ids), len(ids)), math.inf)
    np.fill_diagonal(dist, 0.0)
    for edge in graph.edges.values():
        speed = speeds.get(edge.edge_id, edge.speed_mps)
        if speed > 0:
            dist[index[edge.source], index[edge.target]] = edge.length_m / speed
    for k in range(len(ids)):
        dist = np.minimum(dist, dist[:, k, None] + dist[None, k, :])
    return ids, dist


def brute_force_assignment(vehicle_ids, request_ids, costs):
    """Max cardinality, then min total, then lexicographically smallest sorted pair list."""
    order_v = sorted(range(len(vehicle_ids)), key=lambda i: vehicle_ids[i])
    best = None

    def visit(k, used, pairs, total):
        nonlocal best
        if k == len(order_v):
            key = (-len(pairs), total, sorted(pairs))
            if best is None or key < best:
                best = key
            return
        i = order_v[k]
        for j in range(len(request_ids)):
            if j not in used and math.isfinite(costs[i][j]):
                visit(k + 1, used | {j}, pairs + [(vehicle_ids[i], request_ids[j])], total + costs[i][j])
        visit(k + 1, used, pairs, total)

    visit(0, frozenset(), [], 0.0)
    return -best[0], best[1], tuple(best[2])


def exhaustive_insertion(plan, anchor, request, oracle, capacity, pickup_deadline=None, dropoff_deadline=math.inf):
    """Every (i, j) insertion scheduled from scratch; returns (cost, i, j + 1) of the cheapest or None."""
    from darp_routes import DROPOFF, PICKUP, Stop

    deadline_p = request.pickup_deadline_s if pickup_deadline is None else pickup_deadline
    stops = list(plan.stops)
    base_t = anchor.ready_s
    prev = anchor.node
    for s in stops:
        base_t = base_t + oracle.time(prev, s.node)
        prev = s.node

    best = None
    for i, j in itertools.combinations_with_replacement(range(len(stops) + 1), 2):
        seq = (stops[:i] + [Stop(PICKUP, request.request_id, request.origin_node, deadline_p)]
               + stops[i:j] + [Stop(DROPOFF, request.request_id, request.dest_node, dropoff_deadline)] + stops[j:])
        t, prev, load, ok = anchor.ready_s, anchor.node, plan.start_load, True
        for s in seq:
            t = t + oracle.time(prev, s.node)
            load += s.load_change
            if math.isinf(t) or t > s.deadline_s or load > capacity:
                ok = False
                break
            prev = s.node
        if ok:
            delta = t - base_t
            if best is None or delta < best[0]:
                best = (delta, i, j + 1)
    if best is None:
        return None
    delta, i, j = best
    return (delta if delta > 0 else 0.0), i, j


def line_graph(n_nodes, length_m=600.0, speed_mps=10.0):
    """Bidirectional chain p000 - p001 - ...; every hop takes length_m / speed_mps seconds."""
    nodes = [(f"p{i:03d}", 51.40 + 0.001 * i, 5.40) for i in range(n_nodes)]
    edges = []
    for i in range(n_nodes - 1):
        a, b = nodes[i][0], nodes[i + 1][0]
        edges.append((f"{a}>{b}", a, b, length_m, speed_mps))
        edges.append((f"{b}>{a}", b, a, length_m, speed_mps))
    return RoadGraph(nodes, edges)


def make_request(request_id, origin, dest, submission_s=0.0, max_wait_s=420.0, graph=None):
    """Trip request pinned to graph nodes (coordinates taken from graph when given)."""
    from demand import TripRequest

    o_lat, o_lon = graph.nodes[origin] if graph is not None else (0.0, 0.0)
    d_lat, d_lon = graph.nodes[dest] if graph is not None else (0.0, 0.0)
    return TripRequest(request_id, o_lat, o_lon, d_lat, d_lon, submission_s, submission_s + max_wait_s,
                       origin_node=origin, dest_node=dest)
