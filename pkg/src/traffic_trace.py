"""Synthetic camera streams: recorded highway cameras and simulated ring-road cameras."""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from road_network import (BoundingBox, TrafficEvent, DEFAULT_PLAUSIBILITY_FACTOR,
                          corridor_path, ring_path)


@dataclass(frozen=True)
class CameraSet:
    source: str
    edge_ids: Tuple[str, ...]
    congested: bool = False


def path_edges(graph, path, both_directions=True):
    edges = []
    for a, b in zip(path, path[1:]):
        pairs = ((a, b), (b, a)) if both_directions else ((a, b),)
        for u, v in pairs:
            edge_id = graph.edge_between(u, v)
            if edge_id is None:
                raise ValueError(f"no edge between {u} and {v}")
            if edge_id not in edges:
                edges.append(edge_id)
    return edges


def group_cameras(edge_ids, prefix, edges_per_camera=4, congested=False):
    if edges_per_camera < 1:
        raise ValueError(f"edges per camera must be >= 1, got {edges_per_camera}")
    cameras = []
    for k, start in enumerate(range(0, len(edge_ids), edges_per_camera)):
        cameras.append(CameraSet(f"{prefix}-{k + 1:02d}", tuple(edge_ids[start:start + edges_per_camera]), congested))
    return cameras


def default_cameras(graph, highway, ring_bbox, edges_per_camera=4):
    """Congestible cameras along the highway corridor plus free-flowing ring-road cameras."""
    highway_path = corridor_path(graph, *highway)
    ring = ring_path(graph, BoundingBox(*ring_bbox))
    hw_edges = path_edges(graph, highway_path)
    ring_edges = [e for e in path_edges(graph, ring) if e not in set(hw_edges)]
    return (group_cameras(hw_edges, "cam-hw", edges_per_camera, congested=True)
            + group_cameras(ring_edges, "cam-ring", edges_per_camera))


def generate_traffic(graph, cameras, horizon_s, period_s=300.0, congestion_window: Optional[Tuple[float, float]] = None,
                     congestion_factor=0.3, noise=0.0, seed=0, plausibility_factor=DEFAULT_PLAUSIBILITY_FACTOR):
    """One event per camera edge per period over [0, horizon); congested cameras scale freeflow
    speed by congestion_factor for timestamps inside the half-open window."""
    if not period_s > 0:
        raise ValueError(f"camera period must be > 0, got {period_s}")
    if not 0 <= congestion_factor <= plausibility_factor:
        raise ValueError(f"congestion factor {congestion_factor} outside [0, {plausibility_factor}]")
    rng = np.random.default_rng(seed)
    times = np.arange(0.0, horizon_s, period_s)

    events = []
    for t in times:
        t = float(t)
        jammed = congestion_window is not None and congestion_window[0] <= t < congestion_window[1]
        for camera in cameras:
            for edge_id in camera.edge_ids:
                freeflow = graph.edges[edge_id].speed_mps
                speed = freeflow * congestion_factor if camera.congested and jammed else freeflow
                if noise > 0:
                    speed = speed * (1.0 + rng.uniform(-noise, noise))
                speed = float(min(max(speed, 0.0), plausibility_factor * freeflow))
                events.append(TrafficEvent(edge_id, speed, t, camera.source))

    events.sort(key=lambda e: (e.timestamp_s, e.source, e.edge_id))
    logging.getLogger().info("[INFO] Generated %d traffic events from %d cameras", len(events), len(cameras))
    return events
