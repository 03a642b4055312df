import os
import logging

import pandas as pd

from demand import RequestTrace, TripRequest
from road_network import TrafficEvent

TRACE_COLUMNS = ["request_id", "origin_lat", "origin_lon", "dest_lat", "dest_lon",
                 "submission_s", "pickup_deadline_s", "party_size"]
TRAFFIC_COLUMNS = ["timestamp_s", "edge_id", "speed_mps", "source"]
_META_KEYS = {"seed": int, "horizon_s": float, "window_s": float, "max_wait_s": float}


class TraceFormatError(ValueError):
    pass


# ---------- Demand Traces ----------

def save_trace(trace, path):
    df = pd.DataFrame([{c: getattr(r, c) for c in TRACE_COLUMNS} for r in trace.requests], columns=TRACE_COLUMNS)
    if len(trace.region_codes) == len(trace.requests):
        df["origin_region"] = trace.region_codes
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"# seed={trace.seed} horizon_s={trace.horizon_s!r} window_s={trace.window_s!r} "
                f"max_wait_s={trace.max_wait_s!r}\n")
        df.to_csv(f, index=False)
    logging.getLogger().info("[INFO] Demand trace saved: %s (%d requests)", path, len(df))


def _read_meta(path):
    with open(path, encoding="utf-8") as f:
        first = f.readline().strip()
    if not first.startswith("#"):
        return {}, False
    meta = {}
    for token in first.lstrip("#").split():
        key, _, value = token.partition("=")
        if key in _META_KEYS:
            try:
                meta[key] = _META_KEYS[key](value)
            except ValueError:
                raise TraceFormatError(f"{path}: line 1: bad {key} value {value!r}") from None
    return meta, True


def load_trace(path, max_wait_s=None):
    """Read a demand trace; rows must be in non-decreasing submission order."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Missing demand trace: {path}")
    meta, has_meta = _read_meta(path)
    first_row_line = 3 if has_meta else 2
    try:
        df = pd.read_csv(path, comment="#", float_precision="round_trip",
                         dtype={"request_id": str, "origin_region": str})
    except pd.errors.EmptyDataError:
        df = pd.DataFrame(columns=TRACE_COLUMNS)

    required = [c for c in TRACE_COLUMNS if c != "party_size"]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise TraceFormatError(f"{path}: missing columns {', '.join(missing)}")
    if "party_size" not in df.columns:
        df["party_size"] = 1

    bad = df[required].isna().any(axis=1)
    if bad.any():
        line = int(bad.to_numpy().argmax()) + first_row_line
        raise TraceFormatError(f"{path}: line {line}: empty field")
    duplicated = df["request_id"].duplicated()
    if duplicated.any():
        line = int(duplicated.to_numpy().argmax()) + first_row_line
        raise TraceFormatError(f"{path}: line {line}: duplicate request id {df['request_id'][duplicated].iloc[0]}")
    negative = df["submission_s"] < 0
    if negative.any():
        line = int(negative.to_numpy().argmax()) + first_row_line
        raise TraceFormatError(f"{path}: line {line}: negative submission time")
    backwards = df["submission_s"].diff() < 0
    if backwards.any():
        line = int(backwards.to_numpy().argmax()) + first_row_line
        raise TraceFormatError(f"{path}: line {line}: submission time goes backwards")

    requests = []
    for i, row in enumerate(df.itertuples(index=False)):
        try:
            request = TripRequest(str(row.request_id), float(row.origin_lat), float(row.origin_lon),
                                  float(row.dest_lat), float(row.dest_lon), float(row.submission_s),
                                  float(row.pickup_deadline_s), int(row.party_size))
        except (TypeError, ValueError) as e:
            raise TraceFormatError(f"{path}: line {i + first_row_line}: {e}") from None
        if request.party_size < 1:
            raise TraceFormatError(f"{path}: line {i + first_row_line}: party size must be >= 1")
        requests.append(request)

    if max_wait_s is None:
        max_wait_s = meta.get("max_wait_s", requests[0].max_wait_s if requests else 420.0)
    horizon = meta.get("horizon_s", requests[-1].submission_s if requests else 0.0)
    codes = list(df["origin_region"]) if "origin_region" in df.columns else []
    return RequestTrace(requests, meta.get("seed", 0), horizon, meta.get("window_s", 10.0), max_wait_s, codes)


# ---------- Traffic Traces ----------

def save_traffic(events, path):
    df = pd.DataFrame([(e.timestamp_s, e.edge_id, e.speed_mps, e.source) for e in events], columns=TRAFFIC_COLUMNS)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    df.to_csv(path, index=False)
    logging.getLogger().info("[INFO] Traffic trace saved: %s (%d events)", path, len(df))


def load_traffic(path, graph=None):
    """Camera events sorted by (timestamp, source, edge); graph, when given, checks edge ids."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Missing traffic trace: {path}")
    try:
        df = pd.read_csv(path, float_precision="round_trip", dtype={"edge_id": str, "source": str})
    except pd.errors.EmptyDataError:
        return []
    missing = [c for c in TRAFFIC_COLUMNS if c not in df.columns]
    if missing:
        raise TraceFormatError(f"{path}: missing columns {', '.join(missing)}")

    events = []
    for i, row in enumerate(df.itertuples(index=False)):
        line = i + 2
        if pd.isna(row.timestamp_s) or pd.isna(row.speed_mps) or pd.isna(row.edge_id):
            raise TraceFormatError(f"{path}: line {line}: empty field")
        if row.timestamp_s < 0 or row.speed_mps < 0:
            raise TraceFormatError(f"{path}: line {line}: negative timestamp or speed")
        if graph is not None and row.edge_id not in graph.edges:
            raise TraceFormatError(f"{path}: line {line}: unknown edge '{row.edge_id}'")
        source = "camera" if pd.isna(row.source) else str(row.source)
        events.append(TrafficEvent(str(row.edge_id), float(row.speed_mps), float(row.timestamp_s), source))
    events.sort(key=lambda e: (e.timestamp_s, e.source, e.edge_id))
    return events


class FileLoader:
    def __init__(self, demand_path=None, traffic_path=None, graph=None, max_wait_s=None):
        self.demand_path = demand_path
        self.traffic_path = traffic_path

        self.trace = self._load(load_trace, demand_path, "demand", max_wait_s) if demand_path else None
        self.traffic = self._load(load_traffic, traffic_path, "traffic", graph) if traffic_path else []

    def _load(self, reader, path, kind, extra):
        try:
            return reader(path, extra)
        except Exception as e:
            logging.getLogger().error("[ERROR] %s trace error: %s", kind.capitalize(), e)
            raise

    def get_trace(self):
        return self.trace

    def get_traffic(self):
        return self.traffic
