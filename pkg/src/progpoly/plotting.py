"""Figures for generation traces, convergence statistics and conformance runs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .reports import bench_rows  # noqa: E402

_RC = {"font.size": 9, "axes.spines.top": False, "axes.spines.right": False, "figure.dpi": 120}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_trace(report: dict, path: Path) -> Path:
    """Violated rows per iteration; lucky rounds filled, infeasible samples marked on the axis."""
    trace = report.get("trace", [])
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 3))
        step = np.arange(1, len(trace) + 1)
        nv = np.array([max(r["n_v"], 0) for r in trace], dtype=float)
        lucky = np.array([r["lucky"] for r in trace], dtype=bool)
        infeasible = np.array([r["infeasible"] for r in trace], dtype=bool)
        ax.plot(step, nv + 1, color="0.6", lw=0.8)
        ax.scatter(step[lucky], nv[lucky] + 1, s=12, color="C0", label="lucky")
        ax.scatter(step[~lucky & ~infeasible], nv[~lucky & ~infeasible] + 1, s=12, facecolors="none",
                   edgecolors="C1", label="unlucky")
        if infeasible.any():
            ax.scatter(step[infeasible], np.ones(infeasible.sum()), marker="x", color="C3", s=12, label="infeasible")
        starts = [i + 1 for i in range(1, len(trace)) if trace[i]["attempt"] != trace[i - 1]["attempt"]]
        for s in starts:
            ax.axvline(s - 0.5, color="0.85", lw=0.8)
        ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("violated rows + 1")
        ax.legend(frameon=False, fontsize=7)
        return _save(fig, path)


def plot_convergence(result: dict, path: Path) -> Path:
    """Median iterations (10%-90% bars) against 6 k ln n, and the lucky fraction against its floor."""
    rows = bench_rows(result)
    with plt.rc_context(_RC):
        fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3))
        labels = [f"k={r['k']}\nn={r['n']:.0e}" for r in rows]
        x = np.arange(len(rows))
        med = np.array([r["median"] for r in rows])
        err = np.array([[r["median"] - r["q10"], r["q90"] - r["median"]] for r in rows]).T
        a.errorbar(x, med, yerr=err, fmt="o", color="C0", capsize=3, label="median iterations")
        a.scatter(x, [r["bound"] for r in rows], marker="_", s=200, color="C3", label="6 k ln n")
        a.set_xticks(x, labels)
        a.set_ylabel("iterations")
        a.set_yscale("log")
        a.legend(frameon=False, fontsize=7)
        b.bar(x, [r["lucky_fraction"] for r in rows], color="C0", alpha=0.7)
        b.scatter(x, [r["lucky_floor"] for r in rows], marker="_", s=200, color="C3", label="0.5 - 3 sigma")
        b.set_xticks(x, labels)
        b.set_ylim(0, 1)
        b.set_ylabel("lucky fraction")
        b.legend(frameon=False, fontsize=7)
        return _save(fig, path)


def plot_conformance(report: dict, path: Path) -> Path:
    """Mismatch counts per (format, mode); zero cells are shown as passed."""
    results = report["results"]
    fmts = list(dict.fromkeys(r["fmt"] for r in results))
    modes = list(dict.fromkeys(r["mode"] for r in results))
    grid = np.full((len(fmts), len(modes)), np.nan)
    for r in results:
        grid[fmts.index(r["fmt"]), modes.index(r["mode"])] = r["mismatches"]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(1.2 + 0.8 * len(modes), 0.8 + 0.3 * len(fmts)))
        ax.imshow(np.where(grid > 0, 1.0, 0.0), cmap="RdYlGn_r", vmin=0, vmax=1.5, aspect="auto")
        for i in range(len(fmts)):
            for j in range(len(modes)):
                v = grid[i, j]
                ax.text(j, i, "" if np.isnan(v) else ("ok" if v == 0 else str(int(v))), ha="center", va="center",
                        fontsize=7)
        ax.set_xticks(range(len(modes)), modes)
        ax.set_yticks(range(len(fmts)), fmts)
        ax.set_title("mismatches", fontsize=9)
        return _save(fig, path)
