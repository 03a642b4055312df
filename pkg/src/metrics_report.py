import os
import json
import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, asdict, field
from typing import List

import numpy as np
import pandas as pd
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import seaborn as sns

from fleet import ASSIGNED, ONBOARD, SERVED, WAITING

HIST_BIN_S = 60.0
SERIES_COLUMNS = ["t_s", "served", "waiting", "assigned", "onboard", "mean_load"]
STATUS_COLUMNS = ["waiting", "assigned", "onboard", "served"]
DELTA_FIELDS = ["injected", "served", "waiting", "assigned", "onboard", "rebalanced",
                "mean_wait_s", "max_wait_s", "mean_detour_s", "violations"]
MATCH_FIELDS = ["seed", "demand_fingerprint", "traffic_fingerprint", "fleet", "horizon_s"]

plt.rcParams["svg.fonttype"] = "none"
plt.rcParams["svg.hashsalt"] = "rideshare"


class RunMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class KpiSample:
    t_s: float
    served: int
    waiting: int
    assigned: int
    onboard: int
    mean_load: float


@dataclass(frozen=True)
class DetourRecord:
    request_id: str
    preferred_s: float
    actual_s: float
    detour_s: float


@dataclass
class RunSummary:
    mode: str
    injected: int
    served: int
    waiting: int
    assigned: int
    onboard: int
    rebalanced: int
    mean_wait_s: float
    max_wait_s: float
    mean_detour_s: float
    histogram: List[list] = field(default_factory=list)
    runtime_s: float = 0.0
    violations: int = 0
    seed: int = 0
    fleet: int = 0
    horizon_s: float = 0.0
    demand_fingerprint: str = ""
    traffic_fingerprint: str = ""

    def to_dict(self):
        return asdict(self)

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path):
        if not os.path.exists(path):
            raise FileNotFoundError(f"Missing run summary: {path}")
        with open(path, encoding="utf-8") as f:
            return cls(**json.load(f))


def sample(world, now):
    counts = Counter(status.status for status in world.requests.values())
    load = sum(len(v.onboard) for v in world.vehicles.values()) / len(world.vehicles)
    return KpiSample(float(now), counts[SERVED], counts[WAITING], counts[ASSIGNED], counts[ONBOARD], load)


def fingerprint(rows):
    digest = hashlib.sha256()
    for row in rows:
        digest.update(repr(row).encode("utf-8"))
    return digest.hexdigest()[:16]


def trace_fingerprint(trace):
    return fingerprint((r.request_id, r.origin_lat, r.origin_lon, r.dest_lat, r.dest_lon, r.submission_s,
                        r.pickup_deadline_s, r.party_size) for r in trace.requests)


def traffic_fingerprint(events):
    return fingerprint((e.timestamp_s, e.edge_id, e.speed_mps, e.source) for e in events)


def series_frame(samples):
    return pd.DataFrame([asdict(s) for s in samples], columns=SERIES_COLUMNS)


def detour_histogram(detours, bin_s=HIST_BIN_S):
    """Counts per bin_s-wide detour bin, covering every bin from the smallest to the largest detour."""
    columns = ["bin_start_s", "bin_end_s", "count"]
    if not detours:
        return pd.DataFrame(columns=columns)
    bins = np.floor(np.array([d.detour_s for d in detours]) / bin_s).astype(int)
    counts = pd.Series(bins).value_counts().reindex(range(bins.min(), bins.max() + 1), fill_value=0).sort_index()
    return pd.DataFrame({"bin_start_s": counts.index * bin_s, "bin_end_s": (counts.index + 1) * bin_s,
                         "count": counts.to_numpy()}, columns=columns)


def summarize(world, config, demand_fp="", traffic_fp=""):
    last = world.samples[-1] if world.samples else KpiSample(0.0, 0, 0, 0, 0, 0.0)
    waits = [s.pickup_s - s.request.submission_s for s in world.requests.values() if s.pickup_s is not None]
    detours = [d.detour_s for d in world.detours]
    hist = detour_histogram(world.detours)
    return RunSummary(
        mode=config.mode,
        injected=world.injected,
        served=last.served,
        waiting=last.waiting,
        assigned=last.assigned,
        onboard=last.onboard,
        rebalanced=sum(1 for c in world.commitments if c[3]),
        mean_wait_s=float(np.mean(waits)) if waits else 0.0,
        max_wait_s=float(np.max(waits)) if waits else 0.0,
        mean_detour_s=float(np.mean(detours)) if detours else 0.0,
        histogram=[[float(row.bin_start_s), int(row.count)] for row in hist.itertuples(index=False)],
        runtime_s=world.runtime_s,
        violations=len(world.violations),
        seed=config.seed,
        fleet=len(world.vehicles),
        horizon_s=config.horizon_s,
        demand_fingerprint=demand_fp,
        traffic_fingerprint=traffic_fp,
    )


# ---------- Plots ----------

def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _line_plot(frames, column, ylabel, title, path):
    sns.set_theme(style="whitegrid")
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for label, df in frames.items():
        ax.plot(df["t_s"] / 60.0, df[column], label=label, drawstyle="steps-post")
    ax.set_xlabel("Time (min)")
    ax.set_ylabel(ylabel)
    ax.set_title(title, fontsize=12, weight="bold")
    ax.grid(True, linestyle="--", alpha=0.5)
    ax.legend(loc="upper left")
    labels = [line.get_label() for line in ax.get_lines()]
    _save(fig, path)
    return labels


def _status_bars(frames, path):
    rows = []
    for label, df in frames.items():
        last = df.iloc[-1] if len(df) else pd.Series(0, index=STATUS_COLUMNS)
        rows.extend({"run": label, "status": s, "count": int(last[s])} for s in STATUS_COLUMNS)
    sns.set_theme(style="whitegrid")
    fig, ax = plt.subplots(figsize=(7, 4.5))
    sns.barplot(data=pd.DataFrame(rows), x="status", y="count", hue="run", ax=ax)
    ax.set_title("Customer status at end of run", fontsize=12, weight="bold")
    ax.set_ylabel("Customers")
    _save(fig, path)
    return list(frames)


def _detour_bars(histograms, path):
    rows = [{"run": label, "detour_min": start / 60.0, "count": count}
            for label, hist in histograms.items() for start, count in hist]
    sns.set_theme(style="whitegrid")
    fig, ax = plt.subplots(figsize=(8, 4.5))
    if rows:
        sns.barplot(data=pd.DataFrame(rows), x="detour_min", y="count", hue="run", ax=ax)
    ax.set_xlabel("Detour (min, bin start)")
    ax.set_ylabel("Served customers")
    ax.set_title("Detour time at destination", fontsize=12, weight="bold")
    _save(fig, path)
    return list(histograms)


def plot_runs(frames, histograms, out_dir, prefix=""):
    """One figure per KPI with one series per run label; returns {path: labels drawn}."""
    os.makedirs(out_dir, exist_ok=True)
    specs = [
        ("served", "Served customers", "Customers served over time", "served_vs_time"),
        ("waiting", "Waiting customers", "Customers waiting for a car", "waiting_vs_time"),
        ("mean_load", "Passengers per vehicle", "Mean vehicle load", "mean_load_vs_time"),
    ]
    drawn = {}
    for column, ylabel, title, name in specs:
        path = os.path.join(out_dir, f"{prefix}{name}.svg")
        drawn[path] = _line_plot(frames, column, ylabel, title, path)
    path = os.path.join(out_dir, f"{prefix}status_bars.svg")
    drawn[path] = _status_bars(frames, path)
    path = os.path.join(out_dir, f"{prefix}detour_histogram.svg")
    drawn[path] = _detour_bars(histograms, path)
    return drawn


def plot_fleet_snapshot(world, path):
    """Node cloud with every vehicle marked and annotated with its passenger count."""
    graph = world.graph
    sns.set_theme(style="white")
    fig, ax = plt.subplots(figsize=(9, 6))
    ax.scatter(graph._lons, graph._lats, s=2, color="lightgray")
    for v in world.vehicles.values():
        lat, lon = graph.nodes[v.node]
        if v.edge_id is not None:
            edge = graph.edges[v.edge_id]
            (lat_a, lon_a), (lat_b, lon_b) = graph.nodes[edge.source], graph.nodes[edge.target]
            f = v.fraction(graph)
            lat, lon = lat_a + f * (lat_b - lat_a), lon_a + f * (lon_b - lon_a)
        color = "tab:green" if not v.onboard else "tab:red"
        ax.scatter([lon], [lat], s=30, color=color, zorder=3)
        ax.annotate(str(len(v.onboard)), (lon, lat), fontsize=6, xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("Longitude")
    ax.set_ylabel("Latitude")
    ax.set_title(f"Fleet at t={world.now / 60.0:.0f} min", fontsize=12, weight="bold")
    _save(fig, path)


# ---------- Run Outputs ----------

def finalize(world, config, out_dir, demand_fp="", traffic_fp="", plots=True):
    """Write the KPI series, detours, histogram, summary and plots of one run."""
    logger = logging.getLogger()
    os.makedirs(out_dir, exist_ok=True)
    summary = summarize(world, config, demand_fp, traffic_fp)

    series = series_frame(world.samples)
    series.to_csv(os.path.join(out_dir, "kpi_series.csv"), index=False)
    pd.DataFrame([asdict(d) for d in world.detours],
                 columns=["request_id", "preferred_s", "actual_s", "detour_s"]).to_csv(
        os.path.join(out_dir, "detours.csv"), index=False)
    detour_histogram(world.detours).to_csv(os.path.join(out_dir, "detour_histogram.csv"), index=False)
    summary.to_json(os.path.join(out_dir, "summary.json"))
    if world.violations:
        with open(os.path.join(out_dir, "violations.txt"), "w", encoding="utf-8") as f:
            f.write("\n".join(world.violations) + "\n")

    if plots:
        plot_runs({config.mode: series}, {config.mode: summary.histogram}, out_dir)
        plot_fleet_snapshot(world, os.path.join(out_dir, "fleet_snapshot.svg"))
    logger.info("[INFO] Run outputs written to %s (served %d of %d)", out_dir, summary.served, summary.injected)
    return summary


# ---------- Enabled vs Disabled ----------

def _format_workbook(path):
    from openpyxl import load_workbook
    from openpyxl.styles import Alignment, Font, PatternFill

    wb = load_workbook(path)
    header_font = Font(bold=True, color="FFFFFF")
    header_fill = PatternFill(start_color="366092", end_color="366092", fill_type="solid")
    for ws in wb.worksheets:
        for cell in ws[1]:
            cell.font = header_font
            cell.fill = header_fill
            cell.alignment = Alignment(horizontal="center", vertical="center")
        for column in ws.columns:
            width = max(len(str(cell.value)) for cell in column if cell.value is not None)
            ws.column_dimensions[column[0].column_letter].width = min(width + 2, 40)
    wb.save(path)


def compare(summary_enabled, summary_disabled, out_dir=None):
    """Side-by-side deltas (enabled minus disabled) plus the directional expectations."""
    logger = logging.getLogger()
    mismatched = [f for f in MATCH_FIELDS if getattr(summary_enabled, f) != getattr(summary_disabled, f)]
    if mismatched:
        details = ", ".join(f"{f}: {getattr(summary_enabled, f)!r} vs {getattr(summary_disabled, f)!r}"
                            for f in mismatched)
        raise RunMismatchError(f"runs are not comparable ({details})")

    rows = []
    for name in DELTA_FIELDS:
        a, b = getattr(summary_enabled, name), getattr(summary_disabled, name)
        rows.append({"field": name, "enabled": a, "disabled": b, "delta": a - b})
    expectations = {
        "served_enabled_ge_disabled": summary_enabled.served >= summary_disabled.served,
        "waiting_enabled_le_disabled": summary_enabled.waiting <= summary_disabled.waiting,
        "mean_detour_enabled_le_disabled": summary_enabled.mean_detour_s <= summary_disabled.mean_detour_s,
    }
    report = {
        "modes": [summary_enabled.mode, summary_disabled.mode],
        "seed": summary_enabled.seed,
        "deltas": {r["field"]: r["delta"] for r in rows},
        "rows": rows,
        "runtime_s": {"enabled": summary_enabled.runtime_s, "disabled": summary_disabled.runtime_s},
        "expectations": expectations,
    }
    for name, held in expectations.items():
        if not held:
            logger.warning("[WARN] Expectation not met: %s", name)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "comparison.json"), "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2, sort_keys=True)
        xlsx = os.path.join(out_dir, "comparison.xlsx")
        with pd.ExcelWriter(xlsx, engine="openpyxl") as writer:
            pd.DataFrame(rows).to_excel(writer, sheet_name="Deltas", index=False)
            pd.DataFrame([{"expectation": k, "held": v} for k, v in expectations.items()]).to_excel(
                writer, sheet_name="Expectations", index=False)
            pd.DataFrame([{"run": m, "runtime_s": t} for m, t in zip(report["modes"], report["runtime_s"].values())]
                         ).to_excel(writer, sheet_name="Runtime", index=False)
        try:
            _format_workbook(xlsx)
        except Exception as e:
            logger.debug("[DEBUG] Excel formatting failed: %s", e)
        logger.info("[INFO] Comparison written to %s", out_dir)
    return report


def seed_sweep_table(reports):
    """One row per compared seed pair with the served counts and whether enabled won."""
    rows = []
    for report in reports:
        served = next(r for r in report["rows"] if r["field"] == "served")
        rows.append({"seed": report["seed"], "served_enabled": served["enabled"],
                     "served_disabled": served["disabled"], "enabled_ge": served["delta"] >= 0})
    df = pd.DataFrame(rows, columns=["seed", "served_enabled", "served_disabled", "enabled_ge"])
    if len(df):
        logger = logging.getLogger()
        logger.info("[INFO] Seed sweep: enabled >= disabled in %d of %d pairs (mean served %.1f vs %.1f)",
                    int(df["enabled_ge"].sum()), len(df), df["served_enabled"].mean(), df["served_disabled"].mean())
    return df
