"""Prediction-error metric and the three reproduction experiments."""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .dynamics import SimulationFault, simulate
from .edmd import DEFAULT_RANGES, PolynomialBasis, SnapshotDataset, build_polynomial_basis, fit_predictor

log = logging.getLogger(__name__)

CHUNK = 256
"""Fixed work-unit size so results do not depend on the thread count."""


def chunked_map(fn, n: int, threads: int = 1, chunk: int = CHUNK) -> list:
    """Apply ``fn(slice)`` over ``range(n)`` in fixed chunks; results in index order."""
    slices = [slice(i, min(i + chunk, n)) for i in range(0, n, chunk)]
    if threads <= 1 or len(slices) <= 1:
        return [fn(s) for s in slices]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, slices))


class DenominatorConvention(str, enum.Enum):
    SUM_OF_NORMS = "SUM_OF_NORMS"
    AS_PRINTED = "AS_PRINTED"


class UndefinedRelativeError(ZeroDivisionError):
    """The reference trajectory has zero norm, so a relative error is meaningless."""


@dataclass(frozen=True)
class RmseConfig:
    denominator_convention: DenominatorConvention = DenominatorConvention.SUM_OF_NORMS
    horizon: int = 30
    Ts: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "denominator_convention", DenominatorConvention(self.denominator_convention))
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


def _row_norms(a: np.ndarray) -> np.ndarray:
    """Euclidean norm of each row, scaled by the row maximum so tiny or huge
    entries neither underflow nor overflow when squared. Non-finite rows
    propagate inf/nan."""
    with np.errstate(over="ignore", invalid="ignore"):
        m = np.max(np.abs(a), axis=1)
        safe = np.where(np.isfinite(m) & (m > 0), m, 1.0)
        val = safe * np.sqrt(np.sum((a / safe[:, None]) ** 2, axis=1))
    return np.where(np.isfinite(m), val, m)


def rmse(pred, real, convention=DenominatorConvention.SUM_OF_NORMS) -> float:
    """Relative trajectory error in percent.

    Numerator is ``sqrt(sum_k |pred_k - real_k|^2)``. The denominator is
    ``sqrt(sum_k |real_k|^2)`` for ``SUM_OF_NORMS`` and ``|sum_k real_k|`` for
    ``AS_PRINTED``. Arrays are time-major ``(N, n)``.
    """
    pred = np.asarray(pred, dtype=float)
    real = np.asarray(real, dtype=float)
    if pred.shape != real.shape or pred.shape[0] < 1:
        raise ValueError(f"trajectories must have equal non-empty shapes, got {pred.shape} and {real.shape}")
    if real.ndim == 1:
        pred, real = pred[:, None], real[:, None]
    with np.errstate(over="ignore", invalid="ignore"):
        num = _row_norms((pred - real).reshape(1, -1))[0]
    if DenominatorConvention(convention) is DenominatorConvention.SUM_OF_NORMS:
        den = _row_norms(real.reshape(1, -1))[0]
    else:
        den = _row_norms(real.sum(axis=0)[None])[0]
    if den == 0:
        raise UndefinedRelativeError("reference trajectory has zero norm")
    return float(100.0 * num / den)


def rmse_batch(pred, real, convention=DenominatorConvention.SUM_OF_NORMS) -> np.ndarray:
    """Per-trajectory :func:`rmse` for time-major batches ``(N, n_traj, n)``.

    Zero-norm references give ``nan`` instead of raising.
    """
    pred = np.asarray(pred, dtype=float)
    real = np.asarray(real, dtype=float)
    if pred.shape != real.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {real.shape}")
    # one contiguous row per trajectory: same summation order as rmse(), and
    # independent of where the trajectory sits in the batch
    rows = lambda a: np.ascontiguousarray(np.moveaxis(a, 1, 0)).reshape(a.shape[1], -1)
    with np.errstate(over="ignore", invalid="ignore"):
        num = _row_norms(rows(pred - real))
    if DenominatorConvention(convention) is DenominatorConvention.SUM_OF_NORMS:
        den = _row_norms(rows(real))
    else:
        den = _row_norms(real.sum(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, 100.0 * num / np.where(den > 0, den, 1.0), np.nan)


# --------------------------------------------------------------------------
# experiment report


@dataclass
class ExperimentReport:
    """Per-trajectory errors plus aggregates over the non-faulted ones."""

    initial_conditions: np.ndarray
    rmse_pct: np.ndarray
    fault: np.ndarray
    fingerprint: str = ""
    seed: int = 0
    nn_distance: Optional[np.ndarray] = None
    extra: Dict[str, str] = field(default_factory=dict)
    baseline_rmse_pct: Optional[np.ndarray] = None

    @property
    def valid(self) -> np.ndarray:
        return ~self.fault & np.isfinite(self.rmse_pct)

    @property
    def n_faults(self) -> int:
        return int(np.count_nonzero(~self.valid))

    @property
    def mean(self) -> float:
        v = self.rmse_pct[self.valid]
        return float(v.mean()) if v.size else float("nan")

    @property
    def std(self) -> float:
        v = self.rmse_pct[self.valid]
        return float(v.std()) if v.size else float("nan")

    def summary(self) -> str:
        lines = [
            f"n_trajectories = {len(self.rmse_pct)}",
            f"mean_rmse_pct = {self.mean!r}",
            f"std_rmse_pct = {self.std!r}",
            f"n_faults = {self.n_faults}",
            f"seed = {self.seed}",
            f"fingerprint = {self.fingerprint}",
        ]
        lines += [f"{k} = {v}" for k, v in sorted(self.extra.items())]
        return "\n".join(lines) + "\n"


REPORT_HEADER = ("traj_id", "vx0", "vy0", "psidot0", "rmse_pct", "fault_flag")


def save_report(path, report: ExperimentReport) -> Path:
    """Write the per-trajectory CSV and a ``.summary.txt`` block next to it."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for i, (x0, r, f) in enumerate(zip(report.initial_conditions, report.rmse_pct, report.fault)):
            w.writerow([i, *(f"{v:.17g}" for v in x0), f"{r:.17g}", int(bool(f))])
    summary_path = path.with_suffix(".summary.txt")
    summary_path.write_text(report.summary())
    return summary_path


def load_report(path) -> ExperimentReport:
    from .params import parse_kv_text

    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != REPORT_HEADER:
            raise ValueError(f"{path}: expected header {','.join(REPORT_HEADER)}")
        rows = [row for row in reader if row]
    data = np.array([[float(v) for v in row] for row in rows], dtype=float).reshape(-1, len(REPORT_HEADER))
    summary_path = path.with_suffix(".summary.txt")
    meta = parse_kv_text(summary_path.read_text()) if summary_path.exists() else {}
    return ExperimentReport(
        initial_conditions=data[:, 1:4],
        rmse_pct=data[:, 4],
        fault=data[:, 5].astype(bool),
        fingerprint=meta.get("fingerprint", ""),
        seed=int(meta.get("seed", 0)),
    )


# --------------------------------------------------------------------------
# basis sweep


@dataclass
class SweepRow:
    order: int
    mean_rmse_pct: float
    n_faults: int
    error: str = ""


SWEEP_HEADER = ("order", "mean_rmse_pct", "n_faults")


def sample_box(n: int, ranges, rng: np.random.Generator) -> np.ndarray:
    lo = np.array([r[0] for r in ranges], dtype=float)
    hi = np.array([r[1] for r in ranges], dtype=float)
    return rng.uniform(lo, hi, size=(n, len(ranges)))


def make_sweep_tests(f, n_test: int = 3375, horizon: int = 30, Ts: float = 0.01, ranges=DEFAULT_RANGES,
                     input_max: float = 100.0, seed: int = 0):
    """Held-out initial states, input sequences and true trajectories for a sweep."""
    rng = np.random.default_rng(seed)
    x0 = sample_box(n_test, ranges, rng)
    inputs = rng.uniform(-input_max, input_max, size=(horizon, n_test, 4))
    truth = simulate(f, x0, inputs, Ts)
    return x0, inputs, truth


def evaluate_predictor_batch(model, x0, inputs, truth, convention=DenominatorConvention.SUM_OF_NORMS,
                             threads: int = 1):
    """Per-trajectory RMSE of open-loop predictions; non-finite predictions are faults."""
    def one(sl):
        with np.errstate(over="ignore", invalid="ignore"):
            pred = model.predict(x0[sl], inputs[:, sl], check_finite=False)
        errs = rmse_batch(pred, truth[:, sl], convention)
        return errs, ~np.isfinite(errs) | ~np.all(np.isfinite(pred), axis=(0, 2))

    parts = chunked_map(one, len(x0), threads)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def basis_sweep(orders: Sequence[int], dataset: SnapshotDataset, f, n_test: int = 3375, horizon: int = 30,
                seed: int = 0, input_max: float = 100.0, ranges=DEFAULT_RANGES,
                convention=DenominatorConvention.SUM_OF_NORMS, progress: Optional[Callable] = None,
                threads: int = 1) -> List[SweepRow]:
    """Fit one EDMD predictor per basis order and score it on held-out trajectories.

    Failures of a single order are recorded in its row; the sweep continues.
    """
    if not len(orders):
        raise ValueError("need at least one basis order")
    x0, inputs, truth = make_sweep_tests(f, n_test, horizon, dataset.Ts, ranges, input_max, seed)
    rows = []
    for k in orders:
        try:
            model = fit_predictor(dataset, build_polynomial_basis(int(k)))
            errs, fault = evaluate_predictor_batch(model, x0, inputs, truth, convention, threads)
            ok = ~fault
            mean = float(errs[ok].mean()) if ok.any() else float("nan")
            rows.append(SweepRow(int(k), mean, int(fault.sum())))
        except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.warning("basis order %s failed: %s", k, exc)
            rows.append(SweepRow(int(k), float("nan"), n_test, str(exc)))
        if progress is not None:
            progress(rows[-1])
    return rows


def save_sweep(path, rows: Sequence[SweepRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for r in rows:
            w.writerow([r.order, f"{r.mean_rmse_pct:.17g}", r.n_faults])


def load_sweep(path) -> List[SweepRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != SWEEP_HEADER:
            raise ValueError(f"{path}: expected header {','.join(SWEEP_HEADER)}")
        return [SweepRow(int(r[0]), float(r[1]), int(r[2])) for r in reader if r]


# --------------------------------------------------------------------------
# restart prediction


@dataclass
class RestartResult:
    t: np.ndarray
    truth: np.ndarray
    prediction: np.ndarray
    segments: List[tuple]
    segment_rmse: np.ndarray

    @property
    def restart_every(self) -> int:
        return len(self.segments[0][1]) - 1 if self.segments else 0


def restart_prediction(model, x0, inputs, restart_every: int, f, Ts: Optional[float] = None,
                       convention=DenominatorConvention.SUM_OF_NORMS) -> RestartResult:
    """Open-loop prediction re-lifted from the true state every ``restart_every`` samples.

    Segment ``s`` starts at sample ``s * restart_every`` from the true state
    and runs up to the next restart point inclusive. The stitched prediction
    holds the propagated values; the re-lifted value at a restart point lives
    in the segment list.
    """
    if restart_every < 1:
        raise ValueError("restart_every must be >= 1")
    Ts = model.Ts if Ts is None else Ts
    inputs = np.asarray(inputs, dtype=float)
    N = inputs.shape[0]
    truth = simulate(f, x0, inputs, Ts)
    pred = np.empty((N + 1, model.n_outputs))
    segments, seg_err = [], []
    start = 0
    while start < N:
        stop = min(start + restart_every, N)
        seg = model.predict(truth[start], inputs[start:stop])
        if start == 0:
            pred[0] = seg[0]
        pred[start + 1: stop + 1] = seg[1:]
        segments.append((start, seg))
        try:
            seg_err.append(rmse(seg[1:], truth[start + 1: stop + 1, : model.n_outputs], convention))
        except UndefinedRelativeError:
            seg_err.append(float("nan"))
        start = stop
    return RestartResult(np.arange(N + 1) * Ts, truth, pred, segments, np.array(seg_err))


def save_restart(path, res: RestartResult) -> None:
    """Truth and stitched prediction side by side: ``t,<state>,<state>_pred``."""
    names = ("v_x", "v_y", "psi_dot")[: res.prediction.shape[1]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t",) + names + tuple(f"{n}_pred" for n in names) + ("segment",))
        for k in range(len(res.t)):
            seg = max(0, (k - 1) // res.restart_every) if res.restart_every else 0
            w.writerow([f"{res.t[k]:.17g}"] + [f"{v:.17g}" for v in res.truth[k, : len(names)]]
                       + [f"{v:.17g}" for v in res.prediction[k]] + [seg])


# --------------------------------------------------------------------------
# eigenfunction experiment


def frozen_state_rmse(x0, truth, convention=DenominatorConvention.SUM_OF_NORMS) -> np.ndarray:
    """Error of the trivial predictor that holds the initial state."""
    return rmse_batch(np.broadcast_to(x0, truth.shape), truth, convention)


def eigen_experiment(model, bank, f, semi_axes, n_test: int = 2000, horizon: float = 0.5, seed: int = 0,
                     inputs=(0.0, 0.0, 0.0, 0.0), initial_conditions=None, fingerprint: str = "",
                     convention=DenominatorConvention.SUM_OF_NORMS, threads: int = 1) -> ExperimentReport:
    """Score an eigenfunction predictor from initial states inside the energy ellipsoid.

    Truth runs the nonlinear model with the bank's held inputs. Trajectories
    whose truth or prediction is non-finite are flagged and left out of the
    aggregates. The frozen-state baseline is scored on the same truth.
    """
    from .eigen import sample_in_ellipsoid

    Ts = model.Ts
    n_steps = int(round(horizon / Ts))
    if initial_conditions is None:
        rng = np.random.default_rng(seed)
        x0 = sample_in_ellipsoid(n_test, semi_axes, rng)
    else:
        x0 = np.asarray(initial_conditions, dtype=float)
    u = np.asarray(inputs, dtype=float)

    def one(sl):
        xs = x0[sl]
        with np.errstate(over="ignore", invalid="ignore"):
            truth = _simulate_tolerant(f, xs, np.broadcast_to(u, (n_steps, len(xs), 4)), Ts)
            pred = model.predict(xs, n_steps=n_steps, check_finite=False)
        return rmse_batch(pred, truth, convention), frozen_state_rmse(xs, truth, convention)

    parts = chunked_map(one, len(x0), threads)
    errs = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0)
    base = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0)
    fault = ~np.isfinite(errs)
    report = ExperimentReport(x0, errs, fault, fingerprint, seed, bank.nearest_distance(x0),
                              {"horizon_s": repr(float(horizon)), "n_steps": str(n_steps)})
    report.baseline_rmse_pct = base
    ok = report.valid & np.isfinite(base)
    report.extra["frozen_baseline_mean_pct"] = repr(float(base[ok].mean())) if ok.any() else "nan"
    return report


def _simulate_tolerant(f, x0, inputs, Ts):
    """Batch simulation that lets faulted trajectories go non-finite instead of raising."""
    try:
        return simulate(f, x0, inputs, Ts)
    except SimulationFault:
        pass
    from .dynamics import integrate_step

    out = np.empty((inputs.shape[0] + 1,) + np.shape(x0))
    out[0] = x0
    x = np.asarray(x0, dtype=float)
    for k in range(inputs.shape[0]):
        try:
            x = integrate_step(f, x, inputs[k], Ts)
        except SimulationFault:
            k1 = f(x, inputs[k])
            k2 = f(x + 0.5 * Ts * k1, inputs[k])
            k3 = f(x + 0.5 * Ts * k2, inputs[k])
            k4 = f(x + Ts * k3, inputs[k])
            x = x + (Ts / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = x
    return out
