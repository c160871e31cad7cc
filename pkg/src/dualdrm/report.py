"""Benchmark rows, aggregates, CSV output and the timing histogram figure."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ROW_FIELDS = ["record", "scenario_id", "planner", "success", "time_s", "cost", "pairs_expanded",
              "fallback_used", "failure_kind", "n_total", "n_success", "success_rate",
              "time_mean_s", "time_median_s", "time_p10_s", "time_p90_s", "time_min_s",
              "time_max_s", "note"]

PLANNER_NOTES = {
    "leader-follower": "follower is a discrete neighbour-descent stand-in for a local QP planner",
    "product-oracle": "optimal search on the materialized product graph",
}


@dataclass
class BenchRow:
    scenario_id: str
    planner: str
    success: bool
    time_s: float | None
    cost: float | None
    pairs_expanded: int
    fallback_used: bool
    failure_kind: str = ""


@dataclass
class Aggregate:
    planner: str
    n_total: int
    n_success: int
    time_mean_s: float | None
    time_median_s: float | None
    time_p10_s: float | None
    time_p90_s: float | None
    time_min_s: float | None
    time_max_s: float | None

    @property
    def success_rate(self) -> float:
        return self.n_success / self.n_total if self.n_total else 0.0


def aggregate(rows, planner: str) -> Aggregate:
    """Timing statistics use successful plans only."""
    mine = [r for r in rows if r.planner == planner]
    times = np.array([r.time_s for r in mine if r.success and r.time_s is not None], float)
    ok = sum(r.success for r in mine)
    if len(times):
        p10, p50, p90 = np.percentile(times, [10, 50, 90])
        stats = (float(times.mean()), float(p50), float(p10), float(p90), float(times.min()),
                 float(times.max()))
    else:
        stats = (None,) * 6
    return Aggregate(planner, len(mine), ok, *stats)


def _fmt(x, digits=6):
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return f"{x:.{digits}f}"
    return str(x)


def report_csv(rows, planners, omit_timing: bool = False) -> str:
    """Per-query rows followed by one aggregate row per planner.

    ``omit_timing`` blanks every wall-clock column so reruns are byte-identical.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    t = (lambda x: "") if omit_timing else _fmt
    for r in rows:
        w.writerow(["row", r.scenario_id, r.planner, _fmt(r.success), t(r.time_s), _fmt(r.cost),
                    r.pairs_expanded, _fmt(r.fallback_used), r.failure_kind]
                   + [""] * 9 + [""])
    for p in planners:
        a = aggregate(rows, p)
        w.writerow(["aggregate", "*", p, "", "", "", "", "", "", a.n_total, a.n_success,
                    _fmt(a.success_rate), t(a.time_mean_s), t(a.time_median_s), t(a.time_p10_s),
                    t(a.time_p90_s), t(a.time_min_s), t(a.time_max_s), PLANNER_NOTES.get(p, "")])
    return buf.getvalue()


def read_report(path) -> list:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def histogram_bins(rows, n_bins: int = 20) -> np.ndarray:
    times = [r.time_s for r in rows if r.success and r.time_s]
    if not times:
        return np.array([0.0, 1.0])
    lo, hi = max(min(times), 1e-4), max(times)
    if hi <= lo:
        hi = lo * 1.01
    return np.geomspace(lo, hi, n_bins + 1)


def histogram_csv(rows, planners, n_bins: int = 20) -> str:
    """Per-planner counts of successful planning times on shared log-spaced bins."""
    edges = histogram_bins(rows, n_bins)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["planner", "bin_lo_s", "bin_hi_s", "count"])
    for p in planners:
        t = [r.time_s for r in rows if r.planner == p and r.success and r.time_s]
        counts, _ = np.histogram(np.clip(t, edges[0], edges[-1]), bins=edges)
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([p, _fmt(float(lo)), _fmt(float(hi)), int(c)])
    return buf.getvalue()


def render_figure(rows, planners, path):
    """Two panels: planning-time histogram (successes only) and success rate."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    edges = histogram_bins(rows)
    fig, (ax_t, ax_s) = plt.subplots(1, 2, figsize=(10, 4), gridspec_kw={"width_ratios": [3, 1]})
    for p in planners:
        t = [r.time_s for r in rows if r.planner == p and r.success and r.time_s]
        ax_t.hist(np.clip(t, edges[0], edges[-1]), bins=edges, alpha=0.6, label=p)
    ax_t.set_xscale("log")
    ax_t.set_xlabel("planning time [s] (successful plans)")
    ax_t.set_ylabel("queries")
    ax_t.legend()
    rates = [aggregate(rows, p).success_rate * 100 for p in planners]
    ax_s.bar(range(len(planners)), rates, color="tab:gray")
    ax_s.set_xticks(range(len(planners)), planners, rotation=20)
    ax_s.set_ylim(0, 100)
    ax_s.set_ylabel("success rate [%]")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def write_report(rows, planners, out_csv, omit_timing=False, figure=True):
    """Writes ``out_csv``, ``<stem>_hist.csv`` and (optionally) ``<stem>.png``; returns the paths."""
    out_csv = Path(out_csv)
    out_csv.write_text(report_csv(rows, planners, omit_timing))
    hist = out_csv.with_name(out_csv.stem + "_hist.csv")
    hist.write_text(histogram_csv(rows, planners) if not omit_timing else
                    "planner,bin_lo_s,bin_hi_s,count\n")
    paths = [out_csv, hist]
    if figure:
        png = out_csv.with_suffix(".png")
        render_figure(rows, planners, png)
        paths.append(png)
    return paths
