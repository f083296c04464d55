"""Static SVG figures for sweeps, trajectories and experiment reports.

Output is byte-stable: fixed hash salt, no date metadata, Agg-free SVG backend.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PLOT_KINDS = ("sweep", "trajectory", "restart", "report")

_RC = {
    "svg.hashsalt": "koopvd",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.figsize": (6.4, 4.0),
}


class PlotSchemaError(ValueError):
    pass


def _save(fig, path, fingerprint: str = "") -> Path:
    path = Path(path)
    meta = {"Date": None, "Creator": None}
    if fingerprint:
        meta["Description"] = f"fingerprint {fingerprint}"
    fig.savefig(path, format="svg", metadata=meta)
    plt.close(fig)
    return path


def _no_data(ax):
    ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes, gid="no-data")


def plot_sweep(orders: Sequence[int], mean_rmse: Sequence[float], path, n_faults=None, fingerprint: str = "") -> Path:
    """Bar chart of mean RMSE per basis order; a unique minimum is annotated."""
    orders = np.asarray(orders, dtype=int)
    vals = np.asarray(mean_rmse, dtype=float)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.set_xlabel("polynomial basis order")
        ax.set_ylabel("mean RMSE (%)")
        finite = np.isfinite(vals)
        if not finite.any():
            _no_data(ax)
            return _save(fig, path, fingerprint)
        ax.bar(orders[finite], vals[finite], color="tab:blue", alpha=0.8)
        ax.set_yscale("log")
        ax.set_xticks(orders)
        best = np.nanmin(vals)
        hits = np.flatnonzero(vals == best)
        if len(hits) == 1:
            i = hits[0]
            ax.annotate(f"min {best:.3g}% (order {orders[i]})", xy=(orders[i], best),
                        xytext=(0, 18), textcoords="offset points", ha="center",
                        arrowprops={"arrowstyle": "->"}, gid="minimum-annotation")
        if n_faults is not None:
            for o, v, nf in zip(orders, vals, n_faults):
                if nf and np.isfinite(v):
                    ax.text(o, v, f"{nf} faults", ha="center", va="bottom", fontsize=6)
        return _save(fig, path, fingerprint)


def plot_trajectory(t, traj, names, path, prediction=None, segment_starts=(), fingerprint: str = "") -> Path:
    """One panel per state; optional prediction overlay with restart markers."""
    traj = np.asarray(traj, dtype=float)
    with plt.rc_context(_RC):
        n = max(1, traj.shape[1] if traj.ndim == 2 else 1)
        fig, axes = plt.subplots(n, 1, sharex=True, figsize=(6.4, 1.8 * n + 0.6), squeeze=False)
        axes = axes[:, 0]
        if traj.size == 0:
            _no_data(axes[0])
            return _save(fig, path, fingerprint)
        for i, ax in enumerate(axes):
            ax.plot(t, traj[:, i], color="black", lw=1.2, label="nonlinear")
            if prediction is not None:
                ax.plot(t, prediction[:, i], color="tab:red", lw=1.0, ls="--", label="linear predictor")
            for s in segment_starts:
                ax.axvline(t[s], color="gray", lw=0.5, alpha=0.6)
            ax.set_ylabel(names[i])
        axes[-1].set_xlabel("t (s)")
        if prediction is not None:
            axes[0].legend(loc="upper right", fontsize=7)
        fig.tight_layout()
        return _save(fig, path, fingerprint)


def plot_report(initial_conditions, rmse_pct, path, fault=None, fingerprint: str = "") -> Path:
    """Top view of initial conditions coloured and sized by prediction error."""
    x0 = np.asarray(initial_conditions, dtype=float).reshape(-1, 3)
    err = np.asarray(rmse_pct, dtype=float)
    ok = np.isfinite(err) if fault is None else (~np.asarray(fault, dtype=bool) & np.isfinite(err))
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.set_xlabel("v_x (m/s)")
        ax.set_ylabel("psi_dot (rad/s)")
        if not ok.any():
            _no_data(ax)
            return _save(fig, path, fingerprint)
        e = err[ok]
        size = 4 + 40 * np.clip(e / max(e.max(), 1e-12), 0, 1)
        sc = ax.scatter(x0[ok, 0], x0[ok, 2], c=e, s=size, cmap="viridis", alpha=0.8, linewidths=0)
        fig.colorbar(sc, ax=ax, label="RMSE (%)")
        ax.set_title(f"mean {e.mean():.1f}%, std {e.std():.1f}%  (n={ok.sum()})")
        return _save(fig, path, fingerprint)


def _read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        rows = [row for row in reader if row]
    if header is None:
        raise PlotSchemaError(f"{path}: empty file")
    return header, rows


def emit_plot(input_path, kind: str, output_path, fingerprint: str = "") -> Path:
    """Render an SVG from a CSV artifact of the given kind."""
    if kind not in PLOT_KINDS:
        raise PlotSchemaError(f"unknown plot kind {kind!r}; expected one of {PLOT_KINDS}")
    header, rows = _read_csv(input_path)
    data = np.array([[float(v) for v in r] for r in rows], dtype=float).reshape(-1, len(header))
    if kind == "sweep":
        if header[:3] != ["order", "mean_rmse_pct", "n_faults"]:
            raise PlotSchemaError(f"{input_path}: not a sweep CSV")
        return plot_sweep(data[:, 0].astype(int), data[:, 1], output_path, data[:, 2].astype(int), fingerprint)
    if kind == "report":
        if header != ["traj_id", "vx0", "vy0", "psidot0", "rmse_pct", "fault_flag"]:
            raise PlotSchemaError(f"{input_path}: not an experiment report CSV")
        return plot_report(data[:, 1:4], data[:, 4], output_path, data[:, 5].astype(bool), fingerprint)
    if kind == "trajectory":
        if header[0] != "t" or any(h.endswith("_pred") for h in header):
            raise PlotSchemaError(f"{input_path}: not a trajectory CSV")
        return plot_trajectory(data[:, 0], data[:, 1:], header[1:], output_path, fingerprint=fingerprint)
    # restart
    if header[0] != "t" or header[-1] != "segment":
        raise PlotSchemaError(f"{input_path}: not a restart-prediction CSV")
    n = (len(header) - 2) // 2
    seg = data[:, -1].astype(int)
    # row i closes segment seg[i]; the next one restarts from the true state at row i
    starts = [0] + [int(i) for i in np.flatnonzero(np.diff(seg))]
    return plot_trajectory(data[:, 0], data[:, 1:1 + n], header[1:1 + n], output_path,
                           prediction=data[:, 1 + n:1 + 2 * n], segment_starts=starts, fingerprint=fingerprint)
