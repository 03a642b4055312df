"""In-process publish/subscribe fabric: message broker, vehicle IoT platform,
context (traffic) platform and the interworking gateway between them.

Delivery is synchronous and in publish order; every message is kept in a
per-topic append-only log that can be written out and replayed.
"""

import os
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, asdict
from typing import Any, Optional, Tuple

from demand import TripRequest
from road_network import TrafficEvent

REQUESTS = "requests"
TELEMETRY = "vehicle.telemetry"
COMMANDS = "vehicle.commands"
TRAFFIC = "context.traffic"
GATEWAY_IN = "gateway.in"
GATEWAY_OUT = "gateway.out"
TOPICS = (REQUESTS, TELEMETRY, COMMANDS, TRAFFIC, GATEWAY_IN, GATEWAY_OUT)

log = logging.getLogger()


class BusError(ValueError):
    pass


class LogFormatError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleTelemetry:
    vehicle_id: str
    edge_id: Optional[str]
    fraction: float
    onboard: int
    capacity: int = 4
    kind: str = "position"
    request_id: Optional[str] = None
    detected: Optional[TrafficEvent] = None

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise BusError(f"telemetry fraction {self.fraction} outside [0, 1]")
        if not 0 <= self.onboard <= self.capacity:
            raise BusError(f"telemetry onboard {self.onboard} exceeds capacity {self.capacity}")


@dataclass(frozen=True)
class VehicleCommand:
    vehicle_id: str
    request_id: str
    stops: Tuple[Tuple[str, str, str, float], ...]
    rebalanced: bool = False


PAYLOAD_TYPES = {
    REQUESTS: TripRequest,
    TELEMETRY: VehicleTelemetry,
    COMMANDS: VehicleCommand,
    TRAFFIC: TrafficEvent,
    GATEWAY_IN: TrafficEvent,
    GATEWAY_OUT: TrafficEvent,
}
_BY_NAME = {cls.__name__: cls for cls in PAYLOAD_TYPES.values()}


@dataclass(frozen=True)
class BusMessage:
    topic: str
    seq: int
    timestamp_s: float
    payload: Any


class MessageBus:
    def __init__(self, latency_s=None):
        self.logs = {topic: [] for topic in TOPICS}
        self.handlers = defaultdict(list)
        self.latency_s = dict(latency_s or {})

    def subscribe(self, topic, callback, owner=None):
        if topic not in self.logs:
            raise BusError(f"unknown topic '{topic}'")
        log.debug("[DEBUG] %s subscribed to %s", owner, topic)
        self.handlers[topic].append((callback, owner))

    def unsubscribe(self, owner):
        for topic in self.handlers:
            self.handlers[topic] = [(cb, o) for cb, o in self.handlers[topic] if o is not owner]

    def publish(self, topic, payload, timestamp_s):
        """Append to the topic log and deliver to every subscriber before returning the sequence number."""
        if topic not in self.logs:
            raise BusError(f"unknown topic '{topic}'")
        expected = PAYLOAD_TYPES[topic]
        if not isinstance(payload, expected):
            raise BusError(f"topic '{topic}' carries {expected.__name__}, got {type(payload).__name__}")
        topic_log = self.logs[topic]
        stamp = float(timestamp_s) + self.latency_s.get(topic, 0.0)
        if topic_log and stamp < topic_log[-1].timestamp_s:
            raise BusError(f"timestamp {stamp} on '{topic}' precedes {topic_log[-1].timestamp_s}")
        message = BusMessage(topic, len(topic_log), stamp, payload)
        topic_log.append(message)
        for callback, _ in list(self.handlers[topic]):
            callback(message)
        return message.seq

    def messages(self):
        """All logged messages in (timestamp, topic, seq) order."""
        merged = [m for topic in TOPICS for m in self.logs[topic]]
        return sorted(merged, key=lambda m: (m.timestamp_s, m.topic, m.seq))

    def counts(self):
        return {topic: len(self.logs[topic]) for topic in TOPICS}

    def write_log(self, path):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for message in self.messages():
                f.write(encode_message(message) + "\n")
        log.info("[INFO] Bus log written: %s (%d messages)", path, sum(self.counts().values()))


# ---------- Log Codec ----------

def encode_message(message):
    record = {
        "timestamp_s": message.timestamp_s,
        "topic": message.topic,
        "seq": message.seq,
        "type": type(message.payload).__name__,
        "payload": asdict(message.payload),
    }
    return json.dumps(record, sort_keys=True, allow_nan=False)


def _decode_payload(type_name, data):
    cls = _BY_NAME.get(type_name)
    if cls is None:
        raise ValueError(f"unknown payload type '{type_name}'")
    if cls is VehicleTelemetry and data.get("detected") is not None:
        data = dict(data, detected=TrafficEvent(**data["detected"]))
    if cls is VehicleCommand:
        data = dict(data, stops=tuple(tuple(s) for s in data["stops"]))
    return cls(**data)


def decode_message(line):
    record = json.loads(line)
    topic = record["topic"]
    if topic not in PAYLOAD_TYPES:
        raise ValueError(f"unknown topic '{topic}'")
    payload = _decode_payload(record["type"], record["payload"])
    if not isinstance(payload, PAYLOAD_TYPES[topic]):
        raise ValueError(f"payload {record['type']} does not belong on '{topic}'")
    return BusMessage(topic, int(record["seq"]), float(record["timestamp_s"]), payload)


def replay_log(path):
    """Yield logged messages in (timestamp, topic, seq) order."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Missing bus log: {path}")
    messages = []
    with open(path, encoding="utf-8") as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                messages.append(decode_message(line))
            except (ValueError, KeyError, TypeError) as e:
                raise LogFormatError(f"{path}: record {number}: {e}") from None
    messages.sort(key=lambda m: (m.timestamp_s, m.topic, m.seq))
    yield from messages


# ---------- Interworking Gateway ----------

class InterworkingGateway:
    """Bridges vehicle-detected events to the context platform and relevant
    context events back toward the vehicles (plan-edge membership)."""

    def __init__(self, bus, plan_edges):
        self.bus = bus
        self.plan_edges = plan_edges
        self._forwarded = set()
        bus.subscribe(GATEWAY_IN, self.gateway_forward, owner=self)
        bus.subscribe(TRAFFIC, self.gateway_forward, owner=self)

    def gateway_forward(self, message):
        key = (message.topic, message.seq)
        if key in self._forwarded:
            return []
        self._forwarded.add(key)
        event = message.payload
        if message.topic == GATEWAY_IN:
            seq = self.bus.publish(TRAFFIC, event, message.timestamp_s)
            return [self.bus.logs[TRAFFIC][seq]]
        if message.topic == TRAFFIC and event.edge_id in self.plan_edges():
            seq = self.bus.publish(GATEWAY_OUT, event, message.timestamp_s)
            log.debug("[DEBUG] Gateway forwarded %s event on %s to vehicles", event.source, event.edge_id)
            return [self.bus.logs[GATEWAY_OUT][seq]]
        return []
