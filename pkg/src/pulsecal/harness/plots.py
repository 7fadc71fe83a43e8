"""Report figures, rendered next to the CSV/JSON tables they are drawn from.

Figures are built on ``matplotlib.figure.Figure`` (no pyplot state) and
saved as PNG without the software tag, so reruns produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from pulsecal.conformal import CoverageRow  # noqa: E402
from pulsecal.pipeline import SweepRow  # noqa: E402
from pulsecal.ranking import A_ABOVE, ABSTAIN, Leaderboard  # noqa: E402
from pulsecal.scorekit import TauSummary  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}
COLORS = {
    "parametric": "tab:red",
    "split-conformal": "tab:blue",
    "split-conformal-pooled": "tab:gray",
    "aci": "tab:green",
    "mondrian": "tab:purple",
    "bootstrap": "tab:orange",
}


def _save(fig: Figure, path: Path) -> Path:
    fig.savefig(path, format="png", metadata={"Software": None})
    return path


def _figure(width=6.0, height=4.0, ncols=1):
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(width, height), layout="constrained")
        axes = fig.subplots(1, ncols)
    return fig, axes


def calibration_curve(rows: Sequence[CoverageRow], horizon: int, path: Path) -> Path:
    with matplotlib.rc_context(STYLE):
        fig, ax = _figure()
        for method in dict.fromkeys(r.method for r in rows):
            pts = sorted((1 - r.alpha, r.coverage) for r in rows if r.method == method)
            ax.plot(*zip(*pts), marker="o", ms=3, label=method, color=COLORS.get(method))
        ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="black")
        ax.set_xlim(0.4, 1.0)
        ax.set_ylim(0.4, 1.0)
        ax.set_xlabel("nominal coverage")
        ax.set_ylabel("empirical coverage")
        ax.set_title(f"Calibration at horizon {horizon}")
        ax.legend(loc="upper left")
        return _save(fig, path)


def coverage_by_horizon(rows: Sequence[CoverageRow], alpha: float, path: Path) -> Path:
    with matplotlib.rc_context(STYLE):
        fig, (ax_c, ax_w) = _figure(9.0, 3.5, ncols=2)
        for method in dict.fromkeys(r.method for r in rows):
            sub = [r for r in rows if r.method == method]
            hs = [int(r.group) for r in sub]
            ax_c.plot(hs, [r.coverage for r in sub], marker="o", ms=3, label=method,
                      color=COLORS.get(method))
            ax_w.plot(hs, [r.mean_width for r in sub], marker="o", ms=3, color=COLORS.get(method))
        ax_c.axhline(1 - alpha, ls="--", lw=0.8, color="black")
        ax_c.set_xlabel("horizon (steps)")
        ax_c.set_ylabel("coverage")
        ax_w.set_xlabel("horizon (steps)")
        ax_w.set_ylabel("mean width")
        ax_c.legend()
        return _save(fig, path)


def agent_coverage(rows: Sequence[CoverageRow], methods: Sequence[str], alpha: float,
                   path: Path) -> Path:
    with matplotlib.rc_context(STYLE):
        fig, ax = _figure()
        bins = np.linspace(0.0, 1.0, 41)
        for method in methods:
            cov = [r.coverage for r in rows if r.method == method]
            ax.hist(cov, bins=bins, alpha=0.6, label=method, color=COLORS.get(method))
        ax.axvline(1 - alpha, ls="--", lw=0.8, color="black")
        ax.set_xlabel("per-agent coverage")
        ax.set_ylabel("agents")
        ax.legend()
        return _save(fig, path)


def stratum_heatmap(rows: Sequence[CoverageRow], strata: Sequence[str], horizons: Sequence[int],
                    methods: Sequence[str], path: Path) -> Path:
    lookup = {(r.group, r.method): r.coverage for r in rows}
    with matplotlib.rc_context(STYLE):
        fig, axes = _figure(4.0 * len(methods), 3.0, ncols=len(methods))
        axes = np.atleast_1d(axes)
        for ax, method in zip(axes, methods):
            grid = np.array([[lookup.get((f"{s}@h{h}", method), np.nan) for h in horizons]
                             for s in strata])
            im = ax.imshow(grid, vmin=0.5, vmax=1.0, cmap="viridis", aspect="auto")
            for i in range(grid.shape[0]):
                for j in range(grid.shape[1]):
                    ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center", color="white")
            ax.set_xticks(range(len(horizons)), [str(h) for h in horizons])
            ax.set_yticks(range(len(strata)), list(strata))
            ax.set_xlabel("horizon")
            ax.set_title(method)
        fig.colorbar(im, ax=list(axes), shrink=0.8, label="coverage")
        return _save(fig, path)


def shift_widths(steps: np.ndarray, widths: dict[str, np.ndarray], alpha_t: np.ndarray,
                 target: float, path: Path) -> Path:
    """Mean interval widths and ACI working alpha against steps from the event."""
    with matplotlib.rc_context(STYLE):
        fig, (ax_w, ax_a) = _figure(9.0, 3.5, ncols=2)
        for method, w in widths.items():
            ax_w.plot(steps, w, lw=1.2, label=method, color=COLORS.get(method))
        ax_a.plot(steps, alpha_t, lw=1.2, color=COLORS["aci"])
        ax_a.axhline(target, ls="--", lw=0.8, color="black")
        for ax in (ax_w, ax_a):
            ax.axvline(0, ls=":", lw=0.8, color="black")
            ax.set_xlabel("steps from event")
        ax_w.set_ylabel("mean width")
        ax_a.set_ylabel("working alpha")
        ax_w.legend()
        return _save(fig, path)


def abstention_matrix(board: Leaderboard, path: Path) -> Path:
    ids = [e["agent_id"] for e in board.entries]
    pos = {a: i for i, a in enumerate(ids)}
    grid = np.zeros((len(ids), len(ids)))
    for d in board.decisions:
        i, j = pos[d.pair.a], pos[d.pair.b]
        # +1 when the higher-placed agent is ranked above, -1 when inverted
        hi_first = i < j
        v = 0.0 if d.decision == ABSTAIN else (1.0 if (d.decision == A_ABOVE) == hi_first else -1.0)
        grid[i, j] = grid[j, i] = v
    with matplotlib.rc_context(STYLE):
        fig, ax = _figure(5.0, 4.5)
        im = ax.imshow(grid, vmin=-1, vmax=1, cmap="coolwarm_r")
        ax.set_xlabel("leaderboard rank")
        ax.set_ylabel("leaderboard rank")
        ax.set_title(f"{board.mode}: abstention rate {board.abstention_rate:.2f}")
        fig.colorbar(im, ax=ax, shrink=0.8, ticks=[-1, 0, 1], label="inverted / abstain / ranked")
        return _save(fig, path)


def bound_tightness(sweeps: dict[str, Sequence[SweepRow]], path: Path) -> Path:
    with matplotlib.rc_context(STYLE):
        fig, ax = _figure()
        first = next(iter(sweeps.values()))
        rho = [r.rho for r in first]
        ax.plot(rho, [r.independence_bound for r in first], ls="--", color="black",
                label="independence bound")
        ax.plot(rho, [r.worst_case_bound for r in first], ls=":", color="black",
                label="worst-case bound")
        for rule, rows in sweeps.items():
            ax.plot([r.rho for r in rows], [r.empirical_sigma for r in rows], marker="o", ms=3,
                    label=f"empirical ({rule})")
        ax.set_xlabel("stage error correlation")
        ax.set_ylabel("pipeline sigma")
        ax.legend()
        return _save(fig, path)


def dirichlet_sweep(sweep: Sequence[TauSummary], path: Path) -> Path:
    with matplotlib.rc_context(STYLE):
        fig, ax = _figure()
        k = [s.concentration for s in sweep]
        med = np.array([s.median for s in sweep])
        ax.fill_between(k, [s.p05 for s in sweep], [s.p95 for s in sweep], alpha=0.3,
                        label="5-95%")
        ax.plot(k, med, marker="o", ms=3, label="median")
        ax.set_xscale("log")
        ax.set_xlabel("Dirichlet concentration")
        ax.set_ylabel("Kendall tau vs. default weights")
        ax.legend()
        return _save(fig, path)
