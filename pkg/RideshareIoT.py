import os
import sys
import time
import logging
import argparse
import traceback
from datetime import datetime
from dataclasses import replace

# Add SRC directory to Python path
sys.path.append(os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from experiment_pipeline import RESOLVED_CONFIG, ExperimentPipeline, replay
from file_loader import save_trace, save_traffic
from road_network import load_graph, save_graph
from scenario_config import MODES, ScenarioConfig


# ---------- Logging Helpers ----------

class AutoFlushFileHandler(logging.FileHandler):
    def emit(self, record):
        super().emit(record)
        self.flush()


class ConciseConsoleFilter(logging.Filter):
    def filter(self, record):
        msg = record.getMessage()
        return (
            record.levelname in ("ERROR", "WARNING") or
            msg.startswith(("[START]", "[STEP", "[SUCCESS]", "[INFO]", "[WELCOME]"))
        )


def setup_logging(log_file, debug=False):
    logging.getLogger('').handlers = []
    level = logging.DEBUG if debug else logging.INFO
    logger = logging.getLogger()
    logger.setLevel(level)

    os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
    file_handler = AutoFlushFileHandler(log_file, mode='w', encoding='utf-8')
    file_handler.setFormatter(logging.Formatter('%(asctime)s - %(levelname)s - %(message)s'))
    logger.addHandler(file_handler)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(logging.Formatter('%(message)s'))
    console_handler.addFilter(ConciseConsoleFilter())
    logger.addHandler(console_handler)

    logging.getLogger('matplotlib').setLevel(logging.ERROR)

    run_id = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
    logger.info("--------------------------------------------------")
    logger.info(f"[START] RideshareIoT initiated at {run_id}")
    logger.info("--------------------------------------------------")

    welcome_message = """
[WELCOME] RideshareIoT
==================================
 ____  _     _           _
|  _ \\(_) __| | ___  ___| |__
| |_) | |/ _` |/ _ \\/ __| '_ \\
|  _ <| | (_| |  __/\\__ \\ | | |
|_| \\_\\_|\\__,_|\\___||___/_| |_|
==================================
IoT-aware ridesharing dispatch sim
==================================
"""
    print(welcome_message)
    logger.info(welcome_message)


# ---------- Configuration ----------

FLAG_FIELDS = {
    "graph": "graph_path",
    "grid_bbox": "grid_bbox",
    "grid_spacing": "grid_spacing_m",
    "fleet": "fleet",
    "capacity": "capacity",
    "max_wait_s": "max_wait_s",
    "batch_s": "batch_s",
    "tick_s": "tick_s",
    "horizon_s": "horizon_s",
    "mode": "mode",
    "seed": "seed",
    "demand_trace": "demand_trace",
    "traffic_trace": "traffic_trace",
    "candidates_k": "candidates_k",
    "relax_factor": "relax_factor",
    "regions": "regions_path",
    "out_dir": "out_dir",
}


def resolve_config(args):
    """Config file or preset first, then every flag given on the command line."""
    if args.config:
        config = ScenarioConfig.from_json(args.config)
    else:
        config = ScenarioConfig.preset(args.preset)
    overrides = {field: getattr(args, flag) for flag, field in FLAG_FIELDS.items()}
    if overrides["grid_bbox"] is not None:
        overrides["grid_bbox"] = tuple(overrides["grid_bbox"])
    return config.with_overrides(**overrides).validate()


# ---------- Commands ----------

def _output_path(args, config, default_name):
    return args.output or os.path.join(config.out_dir, default_name)


def _write_resolved(config, output_path):
    config.to_json(os.path.join(os.path.dirname(os.path.abspath(output_path)), RESOLVED_CONFIG))


def cmd_gen_graph(args, config):
    logger = logging.getLogger()
    graph = ExperimentPipeline(config).build_graph()
    path = _output_path(args, config, "graph.json")
    save_graph(graph, path)
    _write_resolved(config, path)
    if load_graph(path) != graph:
        raise ValueError(f"graph written to {path} does not load back identically")
    logger.info("[SUCCESS] Graph written: %s (%d nodes, %d edges)", path, len(graph.nodes), len(graph.edges))


def cmd_gen_demand(args, config):
    logger = logging.getLogger()
    pipeline = ExperimentPipeline(replace(config, demand_trace=None))
    trace = pipeline.demand_trace(pipeline.build_graph())
    path = _output_path(args, config, "demand_trace.csv")
    save_trace(trace, path)
    _write_resolved(pipeline.config, path)
    logger.info("[SUCCESS] Demand trace written: %s (%d requests)", path, len(trace.requests))


def cmd_gen_traffic(args, config):
    logger = logging.getLogger()
    pipeline = ExperimentPipeline(replace(config, traffic_trace=None, synthesize_traffic=True))
    events = pipeline.traffic(pipeline.build_graph())
    path = _output_path(args, config, "traffic_trace.csv")
    save_traffic(events, path)
    _write_resolved(pipeline.config, path)
    logger.info("[SUCCESS] Traffic trace written: %s (%d events)", path, len(events))


def cmd_simulate(args, config):
    logger = logging.getLogger()
    _, summary = ExperimentPipeline(config).simulate(progress=args.progress)
    logger.info("[SUCCESS] %s | served %d of %d | waiting %d | mean detour %.1f s | violations %d",
                summary.mode, summary.served, summary.injected, summary.waiting, summary.mean_detour_s,
                summary.violations)
    return 1 if summary.violations else 0


def cmd_compare(args, config):
    logger = logging.getLogger()
    pipeline = ExperimentPipeline(config)
    _write_resolved(config, os.path.join(config.out_dir, RESOLVED_CONFIG))
    if args.seed_pairs > 1:
        table = pipeline.seed_sweep(args.seed_pairs, progress=args.progress)
        logger.info("[SUCCESS] Seed sweep: enabled >= disabled in %d of %d pairs",
                    int(table["enabled_ge"].sum()), len(table))
        return 0
    report = pipeline.compare(progress=args.progress)
    logger.info("[SUCCESS] Served delta (enabled - disabled): %+d | expectations held: %d of %d",
                report["deltas"]["served"], sum(report["expectations"].values()), len(report["expectations"]))
    return 0


def cmd_replay(args, config):
    logger = logging.getLogger()
    identical = replay(args.run_dir, progress=args.progress)
    if identical:
        logger.info("[SUCCESS] Replay of %s is byte-identical", args.run_dir)
        return 0
    logger.error("[ERROR] Replay of %s diverged", args.run_dir)
    return 1


COMMANDS = {
    "gen-graph": cmd_gen_graph,
    "gen-demand": cmd_gen_demand,
    "gen-traffic": cmd_gen_traffic,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "replay": cmd_replay,
}


# ---------- CLI ----------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Scenario JSON (see Config_Files/).")
    common.add_argument("--preset", default="paper", choices=["paper", "desk"], help="Named scenario preset.")
    common.add_argument("--graph", help="Road graph JSON; omit to use the synthetic grid.")
    common.add_argument("--grid-bbox", type=float, nargs=4, metavar=("N", "E", "S", "W"),
                        help="Grid bounding box: NE lat, NE lon, SW lat, SW lon.")
    common.add_argument("--grid-spacing", type=float, help="Grid spacing in meters.")
    common.add_argument("--regions", help="Region table JSON (defaults to the built-in Brainport table).")
    common.add_argument("--fleet", type=int, help="Number of vehicles.")
    common.add_argument("--capacity", type=int, help="Seats per vehicle.")
    common.add_argument("--max-wait-s", type=float, help="Maximum pickup wait in seconds.")
    common.add_argument("--batch-s", type=float, help="Dispatch batch period in seconds.")
    common.add_argument("--tick-s", type=float, help="Simulation tick in seconds.")
    common.add_argument("--horizon-s", type=float, help="Simulated horizon in seconds.")
    common.add_argument("--mode", choices=MODES, help="Scheduler travel-time mode.")
    common.add_argument("--seed", type=int, help="Master seed for demand, fleet placement and traffic noise.")
    common.add_argument("--demand-trace", help="Demand trace CSV to replay instead of generating one.")
    common.add_argument("--traffic-trace", help="Traffic trace CSV to replay instead of synthesizing one.")
    common.add_argument("--candidates-k", type=int, help="Candidate vehicles priced per request.")
    common.add_argument("--relax-factor", type=float, help="Deadline relaxation factor for rebalancing.")
    common.add_argument("--out-dir", help="Output directory.")
    common.add_argument("--progress", action="store_true", help="Show a progress bar while simulating.")
    common.add_argument("--debug", action="store_true", help="Enable debug logging and stack traces.")

    parser = argparse.ArgumentParser(
        description="RideshareIoT: ridesharing dispatch with and without live traffic events.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=(
            "Example usage:\n"
            "  python RideshareIoT.py simulate --preset desk --mode iot-disabled --seed 7\n"
            "  python RideshareIoT.py compare --config Config_Files/scenario_paper.json --progress\n"
            "  python RideshareIoT.py replay --run-dir output\n\n"
            "Notes:\n"
            "  - Flags override values from --config or --preset.\n"
            "  - Use --debug for verbose logging and stack traces."
        )
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen-graph", "gen-demand", "gen-traffic"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--output", help="Output file (defaults to a file inside --out-dir).")
    sub.add_parser("simulate", parents=[common])
    p = sub.add_parser("compare", parents=[common])
    p.add_argument("--seed-pairs", type=int, default=1, help="Compare over this many consecutive seeds.")
    p = sub.add_parser("replay", parents=[common])
    p.add_argument("--run-dir", required=True, help="Directory of a finished run (bus log + resolved config).")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    start_time = time.time()
    try:
        config = resolve_config(args)
    except Exception as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return 1

    setup_logging(os.path.join(config.out_dir, "rideshare.log"), args.debug)
    logger = logging.getLogger()
    logger.info("[INFO] Command %s | mode %s | fleet %d | seed %d",
                args.command, config.mode, config.fleet, config.seed)
    try:
        status = COMMANDS[args.command](args, config) or 0
    except Exception as e:
        logger.error("[ERROR] %s failed: %s", args.command, e)
        if args.debug:
            logger.error(traceback.format_exc())
        return 1
    logger.info("[INFO] Runtime: %.2f min", (time.time() - start_time) / 60)
    return status


if __name__ == "__main__":
    sys.exit(main())
