"""Static figures for CLI runs (Agg backend, PNG files)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes reproducible
_PNG_META = {"Software": None}

OUTCOME_COLORS = {"GlobalSmooth": "tab:blue", "FiniteTimeBreakdown": "tab:red", "Inconclusive": "tab:gray"}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def plot_trajectory(columns, rows, path, title=""):
    """State components against time on a symmetric log scale."""
    rows = np.asarray(rows)
    t = rows[:, 0]
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for j, name in enumerate(columns[1:], start=1):
        if name.startswith(("I", "C", "J", "energy", "M_")):
            continue
        ax.plot(t, rows[:, j], lw=1.2, label=name)
    ax.set_yscale("symlog", linthresh=1.0)
    ax.set_xlabel("t")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    if len(columns) <= 12:
        ax.legend(fontsize=7, loc="best")
    _save(fig, path)


def plot_portrait(result, path, title=""):
    """Trajectories colored by verdict, starts marked, separatrices overlaid."""
    fig, ax = plt.subplots(figsize=(5.6, 5.2))
    pts = np.array([p["start"] for p in result.points])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = 0.05 * np.maximum(hi - lo, 1e-9)
    for p, s in zip(result.points, result.samples):
        color = OUTCOME_COLORS[p["outcome"]]
        ax.plot(s[:, 1], s[:, 2], color=color, lw=0.6, alpha=0.6)
        ax.plot(*p["start"][:2], "o", ms=2, color=color)
    x = np.linspace(lo[0] - pad[0], hi[0] + pad[0], 400)
    for name, sep in result.separatrices.items():
        if sep == "cusp":
            xs = x[x >= 0]
            ys = np.sqrt(xs ** 3 / 6)
            ax.plot(np.r_[xs[::-1], xs], np.r_[-ys[::-1], ys], "k--", lw=1, label=name)
        else:
            a, b = sep  # line lambda_1 = (a / b) lambda_2
            ax.plot(a * x / b, x, "k--", lw=1, label=name)
    ax.set_xlim(lo[0] - pad[0], hi[0] + pad[0])
    ax.set_ylim(lo[1] - pad[1], hi[1] + pad[1])
    ax.set_xlabel(result.component_names[0])
    ax.set_ylabel(result.component_names[1])
    ax.set_title(title)
    if result.separatrices:
        ax.legend(fontsize=7, loc="lower right")
    _save(fig, path)


def plot_threshold_map(tmap, path, title=""):
    fig, ax = plt.subplots(figsize=(5.6, 4.2))
    outcomes = [r["outcome"] for r in tmap.rows]
    colors = [OUTCOME_COLORS[o] for o in outcomes]
    if len(tmap.param_names) == 1:
        x = [r[tmap.param_names[0]] for r in tmap.rows]
        t = [r["t_star"] if r["t_star"] is not None else np.nan for r in tmap.rows]
        ax.scatter(x, np.nan_to_num(t, nan=0.0), c=colors, s=12)
        ax.set_ylabel("t* (0 where smooth)")
        if tmap.boundary:
            ax.axvline(tmap.boundary["estimate"], color="k", ls="--", lw=1)
    else:
        a, b = tmap.param_names
        ax.scatter([r[a] for r in tmap.rows], [r[b] for r in tmap.rows], c=colors, s=10)
        ax.set_ylabel(b)
    ax.set_xlabel(tmap.param_names[0])
    ax.set_title(title)
    _save(fig, path)


def plot_viscous(result, path):
    """Diagnostics per viscosity plus the final lam2 field of the smallest viscosity."""
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.8))
    for nu, run in result.runs.items():
        if isinstance(run, Exception):
            continue
        axes[0].plot(run.times, run.l1_gap, marker=".", label=f"nu={nu:g}")
        axes[1].plot(run.times, run.max_lam2, marker=".", label=f"nu={nu:g}")
    axes[0].set_title("L1 eigenvalue gap")
    axes[1].set_title("max lam2")
    for ax in axes[:2]:
        ax.set_xlabel("t")
        ax.legend(fontsize=7)
    ok = [(nu, r) for nu, r in result.runs.items() if not isinstance(r, Exception)]
    if ok:
        from .viscous2d import eigen_field

        nu, run = ok[-1]
        ef = eigen_field(run.final)
        vmax = float(np.max(np.abs(ef.lam2))) or 1.0
        im = axes[2].imshow(ef.lam2.T, origin="lower", extent=(0, result.L, 0, result.L), cmap="RdBu_r",
                            vmin=-vmax, vmax=vmax)
        fig.colorbar(im, ax=axes[2])
        axes[2].set_title(f"lam2 at t={run.final.t:g}, nu={nu:g}")
    _save(fig, path)
