import os
import logging
from collections import namedtuple
from dataclasses import replace

from demand import builtin_regions, generate_trace, init_vehicle_positions, load_regions, RequestTrace
from event_bus import GATEWAY_IN, REQUESTS, TRAFFIC, MessageBus, replay_log
from file_loader import FileLoader
from metrics_report import (compare, finalize, plot_runs, seed_sweep_table, series_frame,
                            trace_fingerprint, traffic_fingerprint)
from road_network import corridor_path, generate_grid_graph, load_graph, ring_path
from scenario_config import EINDHOVEN_CENTER, HELMOND_CENTER, IOT_DISABLED, IOT_ENABLED, ScenarioConfig
from simulator import Simulator
from traffic_trace import default_cameras, generate_traffic

Inputs = namedtuple("Inputs", ["graph", "trace", "traffic", "positions"])

BUS_LOG = "bus_log.jsonl"
RESOLVED_CONFIG = "resolved_config.json"


def _ring_bbox(regions):
    for region in regions:
        if region.code == "E":
            return region.bbox
    return regions[0].bbox


class ExperimentPipeline:
    def __init__(self, config, out_dir=None):
        self.config = config.validate()
        self.out_dir = out_dir or config.out_dir
        self.seeds = config.seeds()
        self._regions = None
        self._graph = None
        self._inputs = None
        os.makedirs(self.out_dir, exist_ok=True)

    # ---------- Inputs ----------

    def regions(self):
        if self._regions is None:
            self._regions = load_regions(self.config.regions_path) if self.config.regions_path else builtin_regions()
        return self._regions

    def build_graph(self):
        """Loaded graph, or the synthetic grid with the highway and ring-road corridors laid on it."""
        if self._graph is not None:
            return self._graph
        cfg = self.config
        if cfg.graph_path:
            self._graph = load_graph(cfg.graph_path)
            return self._graph
        base = generate_grid_graph(cfg.grid_bbox, cfg.grid_spacing_m, cfg.default_speed_mps)
        ring = ring_path(base, _ring_bbox(self.regions()))
        highway = corridor_path(base, EINDHOVEN_CENTER, HELMOND_CENTER)
        self._graph = generate_grid_graph(cfg.grid_bbox, cfg.grid_spacing_m, cfg.default_speed_mps,
                                          corridors=[(ring, cfg.ring_speed_mps), (highway, cfg.highway_speed_mps)])
        logging.getLogger().info("[INFO] Grid graph: %d nodes, %d edges", len(self._graph.nodes), len(self._graph.edges))
        return self._graph

    def demand_trace(self, graph):
        cfg = self.config
        if cfg.demand_trace:
            return FileLoader(demand_path=cfg.demand_trace, max_wait_s=cfg.max_wait_s).get_trace()
        return generate_trace(self.regions(), cfg.horizon_s, cfg.requests_per_window, cfg.batch_s,
                              self.seeds["demand"], cfg.max_wait_s, graph)

    def traffic(self, graph):
        cfg = self.config
        if cfg.traffic_trace:
            return FileLoader(traffic_path=cfg.traffic_trace, graph=graph).get_traffic()
        if not cfg.synthesize_traffic:
            return []
        cameras = default_cameras(graph, (EINDHOVEN_CENTER, HELMOND_CENTER), _ring_bbox(self.regions()),
                                  cfg.edges_per_camera)
        return generate_traffic(graph, cameras, cfg.horizon_s, cfg.camera_period_s,
                                (cfg.congestion_start_s, cfg.congestion_end_s), cfg.congestion_factor,
                                cfg.traffic_noise, self.seeds["traffic"], cfg.plausibility_factor)

    def prepare(self):
        if self._inputs is None:
            graph = self.build_graph()
            positions = init_vehicle_positions(self.regions(), self.config.fleet, self.seeds["fleet"])
            self._inputs = Inputs(graph, self.demand_trace(graph), self.traffic(graph), positions)
        return self._inputs

    # ---------- Runs ----------

    def simulate(self, mode=None, out_dir=None, progress=False, plots=True, inputs=None):
        """One run; writes the resolved config, bus log, KPI series, summary and plots."""
        logger = logging.getLogger()
        config = replace(self.config, mode=mode or self.config.mode)
        out_dir = out_dir or self.out_dir
        os.makedirs(out_dir, exist_ok=True)
        inputs = inputs or self.prepare()
        config.to_json(os.path.join(out_dir, RESOLVED_CONFIG))

        logger.info("[INFO] Simulating %s: %d vehicles, %d requests, %d traffic events",
                    config.mode, config.fleet, len(inputs.trace.requests), len(inputs.traffic))
        bus = MessageBus()
        sim = Simulator(config, inputs.graph, inputs.trace, inputs.traffic, inputs.positions, bus)
        world = sim.run(progress=progress)
        bus.write_log(os.path.join(out_dir, BUS_LOG))
        summary = finalize(world, config, out_dir, trace_fingerprint(inputs.trace),
                           traffic_fingerprint(inputs.traffic), plots=plots)
        return world, summary

    def compare(self, progress=False, plots=True):
        logger = logging.getLogger()
        inputs = self.prepare()
        worlds, summaries = {}, {}
        for mode in (IOT_ENABLED, IOT_DISABLED):
            logger.info("--------------------------------------------------")
            logger.info("[STEP] Running %s scenario (seed %d)", mode, self.config.seed)
            worlds[mode], summaries[mode] = self.simulate(mode, os.path.join(self.out_dir, mode), progress, plots,
                                                          inputs)
        report = compare(summaries[IOT_ENABLED], summaries[IOT_DISABLED], self.out_dir)
        if plots:
            frames = {mode: series_frame(worlds[mode].samples) for mode in worlds}
            histograms = {mode: summaries[mode].histogram for mode in summaries}
            plot_runs(frames, histograms, self.out_dir, prefix="comparison_")
        return report

    def seed_sweep(self, n_pairs, progress=False, plots=False):
        """Enabled/disabled pairs over consecutive seeds starting at the configured seed."""
        reports = []
        for k in range(n_pairs):
            seed = self.config.seed + k
            pipeline = ExperimentPipeline(replace(self.config, seed=seed), os.path.join(self.out_dir, f"seed_{seed}"))
            reports.append(pipeline.compare(progress, plots))
        table = seed_sweep_table(reports)
        table.to_csv(os.path.join(self.out_dir, "seed_sweep.csv"), index=False)
        return table


def replay(run_dir, out_dir=None, progress=False):
    """Re-run a logged scenario from the demand and camera traffic in its bus log; True when the
    regenerated bus log is byte-identical to the original."""
    logger = logging.getLogger()
    config = ScenarioConfig.from_json(os.path.join(run_dir, RESOLVED_CONFIG))
    log_path = os.path.join(run_dir, BUS_LOG)
    messages = list(replay_log(log_path))
    detected_by = {m.payload.source for m in messages if m.topic == GATEWAY_IN}
    requests = [m.payload for m in messages if m.topic == REQUESTS]
    traffic = [m.payload for m in messages if m.topic == TRAFFIC and m.payload.source not in detected_by]
    logger.info("[INFO] Replaying %s: %d requests, %d camera events", log_path, len(requests), len(traffic))

    pipeline = ExperimentPipeline(replace(config, demand_trace=None, traffic_trace=None),
                                  out_dir or os.path.join(run_dir, "replay"))
    graph = pipeline.build_graph()
    positions = init_vehicle_positions(pipeline.regions(), config.fleet, pipeline.seeds["fleet"])
    trace = RequestTrace(requests, config.seed, config.horizon_s, config.batch_s, config.max_wait_s)
    pipeline.simulate(out_dir=pipeline.out_dir, progress=progress, plots=False,
                      inputs=Inputs(graph, trace, traffic, positions))

    with open(log_path, "rb") as a, open(os.path.join(pipeline.out_dir, BUS_LOG), "rb") as b:
        identical = a.read() == b.read()
    if identical:
        logger.info("[INFO] Replay reproduced the bus log exactly")
    else:
        logger.warning("[WARN] Replay diverged from %s", log_path)
    return identical
