import os
import json
import logging
from dataclasses import dataclass, asdict, fields, replace
from typing import Optional, Tuple

import numpy as np

from dispatcher import DispatchConfig

IOT_ENABLED = "iot-enabled"
IOT_DISABLED = "iot-disabled"
MODES = (IOT_ENABLED, IOT_DISABLED)
DETOUR_BASELINES = ("freeflow", "live")

# Whole Brainport area (NE lat, NE lon, SW lat, SW lon)
BRAINPORT_BBOX = (51.5021, 5.7249, 51.4018, 5.3950)
EINDHOVEN_CENTER = (51.4369, 5.4805)
HELMOND_CENTER = (51.4764, 5.6582)


class ConfigError(ValueError):
    pass


def _multiple(value, step):
    ratio = value / step
    return abs(ratio - round(ratio)) <= 1e-9


@dataclass
class ScenarioConfig:
    # road network
    graph_path: Optional[str] = None
    grid_bbox: Tuple[float, float, float, float] = BRAINPORT_BBOX
    grid_spacing_m: float = 1000.0
    default_speed_mps: float = 13.9
    highway_speed_mps: float = 27.8
    ring_speed_mps: float = 22.2
    plausibility_factor: float = 2.0
    # demand and fleet
    regions_path: Optional[str] = None
    fleet: int = 100
    capacity: int = 4
    max_wait_s: float = 420.0
    requests_per_window: Tuple[int, int] = (1, 4)
    demand_trace: Optional[str] = None
    # clock
    batch_s: float = 10.0
    tick_s: float = 1.0
    horizon_s: float = 3600.0
    sampling_s: Optional[float] = None
    telemetry_period_s: float = 60.0
    # scheduler
    mode: str = IOT_ENABLED
    candidates_k: int = 30
    relax_factor: float = 2.0
    max_detour_s: Optional[float] = None
    dropoff_window_s: Optional[float] = None
    pricing_workers: int = 1
    # traffic
    traffic_trace: Optional[str] = None
    synthesize_traffic: bool = True
    camera_period_s: float = 300.0
    edges_per_camera: int = 4
    congestion_start_s: float = 600.0
    congestion_end_s: float = 2400.0
    congestion_factor: float = 0.3
    traffic_noise: float = 0.0
    detect_ratio: float = 0.5
    # reporting and run
    detour_baseline: str = "freeflow"
    check_invariants: bool = True
    seed: int = 7
    out_dir: str = "output"

    def __post_init__(self):
        self.grid_bbox = tuple(float(x) for x in self.grid_bbox)
        self.requests_per_window = tuple(int(x) for x in self.requests_per_window)

    @property
    def sample_period_s(self):
        return self.batch_s if self.sampling_s is None else self.sampling_s

    @property
    def dispatch_config(self):
        return DispatchConfig(self.max_wait_s, self.candidates_k, self.relax_factor, self.capacity,
                              self.max_detour_s, self.dropoff_window_s, self.pricing_workers)

    def validate(self):
        problems = []
        if self.tick_s <= 0:
            problems.append(f"tick_s must be > 0 (got {self.tick_s})")
        elif not _multiple(self.batch_s, self.tick_s):
            problems.append(f"batch_s {self.batch_s} is not a multiple of tick_s {self.tick_s}")
        elif self.sample_period_s <= 0:
            problems.append(f"sampling period must be > 0 (got {self.sample_period_s})")
        elif not _multiple(self.sample_period_s, self.tick_s):
            problems.append(f"sampling period {self.sample_period_s} is not a multiple of tick_s {self.tick_s}")
        if self.batch_s <= 0 or not _multiple(self.horizon_s, self.batch_s):
            problems.append(f"horizon_s {self.horizon_s} must be a positive multiple of batch_s {self.batch_s}")
        elif self.sample_period_s > 0 and not _multiple(self.horizon_s, self.sample_period_s):
            problems.append(f"horizon_s {self.horizon_s} is not a multiple of the sampling period {self.sample_period_s}")
        if self.capacity < 1:
            problems.append(f"capacity must be >= 1 (got {self.capacity})")
        if self.fleet < 1:
            problems.append(f"fleet must be >= 1 (got {self.fleet})")
        if self.max_wait_s <= 0:
            problems.append(f"max_wait_s must be > 0 (got {self.max_wait_s})")
        lo, hi = self.requests_per_window
        if lo < 0 or lo > hi:
            problems.append(f"requests_per_window {self.requests_per_window} is empty")
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES} (got {self.mode!r})")
        if self.candidates_k < 1:
            problems.append(f"candidates_k must be >= 1 (got {self.candidates_k})")
        if self.relax_factor < 1:
            problems.append(f"relax_factor must be >= 1 (got {self.relax_factor})")
        if self.grid_spacing_m <= 0:
            problems.append(f"grid_spacing_m must be > 0 (got {self.grid_spacing_m})")
        north, east, south, west = self.grid_bbox
        if not (north > south and east > west):
            problems.append(f"grid_bbox {self.grid_bbox} is degenerate")
        if not 0 <= self.congestion_factor <= self.plausibility_factor:
            problems.append(f"congestion_factor must lie in [0, {self.plausibility_factor}]")
        if self.congestion_end_s < self.congestion_start_s:
            problems.append("congestion window ends before it starts")
        if self.camera_period_s <= 0 or self.telemetry_period_s <= 0:
            problems.append("camera and telemetry periods must be > 0")
        if self.detour_baseline not in DETOUR_BASELINES:
            problems.append(f"detour_baseline must be one of {DETOUR_BASELINES}")
        if self.pricing_workers < 1:
            problems.append("pricing_workers must be >= 1")
        for path_field in ("graph_path", "regions_path", "demand_trace", "traffic_trace"):
            path = getattr(self, path_field)
            if path is not None and not os.path.exists(path):
                problems.append(f"{path_field}: missing file {path}")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def seeds(self):
        """Independent integer seeds for demand, fleet placement and traffic noise."""
        children = np.random.SeedSequence(self.seed).spawn(3)
        return {name: int(child.generate_state(1)[0]) for name, child in zip(("demand", "fleet", "traffic"), children)}

    def with_overrides(self, **overrides):
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **overrides)

    def to_dict(self):
        return asdict(self)

    def to_json(self, path):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        logging.getLogger().debug("[DEBUG] Config written: %s", path)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path):
        if not os.path.exists(path):
            raise FileNotFoundError(f"Missing config file: {path}")
        with open(path, encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
        return cls.from_dict(data)

    @classmethod
    def preset(cls, name):
        if name == "paper":
            return cls()
        if name == "desk":
            return cls(fleet=20, requests_per_window=(1, 1))
        raise ConfigError(f"unknown preset {name!r} (choose paper or desk)")
