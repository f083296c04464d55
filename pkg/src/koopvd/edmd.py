"""Polynomial lifting, grid snapshot datasets and EDMD fitting of (A, B, C)."""

from __future__ import annotations

import csv
import enum
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .dynamics import dynamics_3state_force, integrate_step
from .lstsq import RCOND, LstsqResult, StreamingLstsq
from .params import VehicleParams

MAX_ORDER = 12
DEFAULT_CHUNK_ROWS = 8192
DEFAULT_MAX_ROWS = 5_000_000


class PredictionFault(FloatingPointError):
    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class DatasetTooLarge(ValueError):
    pass


# --------------------------------------------------------------------------
# polynomial basis


@dataclass(frozen=True)
class PolynomialBasis:
    """Monomials ``v_x^a * v_y^b * psi_dot^c`` with a fixed exponent ordering."""

    order: int
    exponents: np.ndarray = field(repr=False)

    def __post_init__(self):
        exps = np.asarray(self.exponents, dtype=np.int64).reshape(-1, 3)
        if len({tuple(e) for e in exps}) != len(exps):
            raise ValueError("duplicate exponent triples")
        if exps.size and (exps.min() < 0 or exps.max() > self.order):
            raise ValueError("exponents must lie in 0..order")
        exps.setflags(write=False)
        object.__setattr__(self, "exponents", exps)

    @property
    def dim(self) -> int:
        return len(self.exponents)

    @property
    def constant_index(self) -> Optional[int]:
        hits = np.flatnonzero(~self.exponents.any(axis=1))
        return int(hits[0]) if hits.size else None

    def index_of(self, a: int, b: int, c: int) -> int:
        hits = np.flatnonzero((self.exponents == (a, b, c)).all(axis=1))
        if not hits.size:
            raise KeyError((a, b, c))
        return int(hits[0])

    def __call__(self, x):
        return lift(self, x)

    def __eq__(self, other):
        return (isinstance(other, PolynomialBasis) and self.order == other.order
                and np.array_equal(self.exponents, other.exponents))

    def __hash__(self):
        return hash((self.order, self.exponents.tobytes()))


def build_polynomial_basis(k: int) -> PolynomialBasis:
    """Full tensor basis of order ``k``: ``(k+1)**3`` monomials, lexicographic in (a, b, c)."""
    if not isinstance(k, (int, np.integer)) or not 0 <= k <= MAX_ORDER:
        raise ValueError(f"basis order must be an integer in [0, {MAX_ORDER}], got {k!r}")
    exps = np.array(list(itertools.product(range(k + 1), repeat=3)), dtype=np.int64)
    return PolynomialBasis(int(k), exps)


def linear_basis() -> PolynomialBasis:
    """The three pure linear monomials only; lifting is then the identity."""
    return PolynomialBasis(1, np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1]]))


def lift(basis: PolynomialBasis, x) -> np.ndarray:
    """Evaluate every monomial of ``basis`` at ``x`` of shape ``(..., 3)``."""
    x = np.asarray(x, dtype=float)
    k = basis.order
    powers = np.empty((3, k + 1) + x.shape[:-1])
    powers[:, 0] = 1.0
    for d in range(3):
        for p in range(1, k + 1):
            powers[d, p] = powers[d, p - 1] * x[..., d]
    e = basis.exponents
    out = powers[0, e[:, 0]] * powers[1, e[:, 1]] * powers[2, e[:, 2]]
    return np.moveaxis(out, 0, -1)


# --------------------------------------------------------------------------
# snapshot dataset


@dataclass
class SnapshotDataset:
    """Structure-of-arrays one-step snapshot pairs ``(x, x+, u, y)``."""

    X: np.ndarray
    X_plus: np.ndarray
    U: np.ndarray
    Y: np.ndarray
    Ts: float
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.X_plus = np.asarray(self.X_plus, dtype=float)
        self.U = np.asarray(self.U, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        K = self.X.shape[0]
        for name in ("X_plus", "U", "Y"):
            if getattr(self, name).shape[0] != K:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} rows, X has {K}")

    @property
    def K(self) -> int:
        return self.X.shape[0]

    def permuted(self, perm) -> "SnapshotDataset":
        return SnapshotDataset(self.X[perm], self.X_plus[perm], self.U[perm], self.Y[perm], self.Ts, dict(self.meta))


def grid_states(ranges, counts) -> np.ndarray:
    axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(ranges, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def force_samples(level: float, n: int, mode: str, rng: np.random.Generator) -> np.ndarray:
    """Force vectors for one amplitude level.

    ``columns``: ``n`` 4-vectors whose components are each an independently
    shuffled ``linspace(-level, level, n)``. ``cartesian``: all ``n**4``
    combinations of that linspace.
    """
    values = np.linspace(-level, level, n)
    if mode == "columns":
        return np.stack([rng.permutation(values) for _ in range(4)], axis=-1)
    if mode == "cartesian":
        return np.array(list(itertools.product(values, repeat=4)))
    raise ValueError(f"unknown force sampling mode {mode!r}")


DEFAULT_RANGES = ((-30.0, 30.0), (-30.0, 30.0), (-10.0, 10.0))
DEFAULT_FORCE_LEVELS = (1.0, 5.0, 10.0, 100.0)


def generate_grid_dataset(vp: VehicleParams, ranges=DEFAULT_RANGES, counts=(15, 15, 15),
                          force_levels=DEFAULT_FORCE_LEVELS, n_force=15, Ts: float = 0.01,
                          force_mode: str = "columns", seed: int = 0,
                          max_rows: int = DEFAULT_MAX_ROWS) -> SnapshotDataset:
    """Grid-sampled one-step dataset for the force-input model.

    Every state grid point is combined with every force sample of every level;
    successors come from one RK4 step. Outputs equal the states.
    """
    counts = tuple(int(c) for c in counts)
    if len(counts) != 3 or min(counts) < 2 or n_force < 2:
        raise ValueError("need at least 2 samples per state dimension and per force component")
    per_level = n_force if force_mode == "columns" else n_force**4
    K = math.prod(counts) * per_level * len(force_levels)
    if K > max_rows:
        raise DatasetTooLarge(f"grid would produce {K} rows, cap is {max_rows}")
    rng = np.random.default_rng(seed)
    states = grid_states(ranges, counts)
    forces = np.vstack([force_samples(F, n_force, force_mode, rng) for F in force_levels])
    X = np.repeat(states, len(forces), axis=0)
    U = np.tile(forces, (len(states), 1))
    f = lambda x, u: dynamics_3state_force(x, u, vp)
    X_plus = integrate_step(f, X, U, Ts)
    meta = {
        "model": "3state_force",
        "Ts": repr(float(Ts)),
        "ranges": ";".join(f"{lo!r},{hi!r}" for lo, hi in ranges),
        "counts": ",".join(map(str, counts)),
        "force_levels": ",".join(repr(float(F)) for F in force_levels),
        "n_force": str(n_force),
        "force_mode": force_mode,
        "seed": str(seed),
    }
    return SnapshotDataset(X, X_plus, U, X.copy(), Ts, meta)


def save_dataset(path, ds: SnapshotDataset) -> Path:
    """Write the dataset CSV and a ``.meta`` sidecar; returns the sidecar path."""
    path = Path(path)
    p = ds.Y.shape[1]
    header = ["vx", "vy", "psidot", "vx_p", "vy_p", "psidot_p", "u1", "u2", "u3", "u4"]
    header += [f"y{i + 1}" for i in range(p)]
    block = np.hstack([ds.X, ds.X_plus, ds.U, ds.Y])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in block:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    meta_path = path.with_suffix(path.suffix + ".meta")
    meta = dict(ds.meta)
    meta["Ts"] = repr(float(ds.Ts))
    meta["K"] = str(ds.K)
    meta_path.write_text("".join(f"{k} = {v}\n" for k, v in sorted(meta.items())))
    return meta_path


def load_dataset(path) -> SnapshotDataset:
    from .params import parse_kv_text

    path = Path(path)
    meta_path = path.with_suffix(path.suffix + ".meta")
    meta = parse_kv_text(meta_path.read_text(), str(meta_path)) if meta_path.exists() else {}
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header) or header[:10] != ["vx", "vy", "psidot", "vx_p", "vy_p", "psidot_p",
                                                       "u1", "u2", "u3", "u4"]:
        raise ValueError(f"{path}: not a snapshot dataset CSV")
    Ts = float(meta.get("Ts", "0.01"))
    return SnapshotDataset(data[:, 0:3], data[:, 3:6], data[:, 6:10], data[:, 10:], Ts, meta)


# --------------------------------------------------------------------------
# fitting


def _row_chunks(K: int, chunk_rows: int):
    for start in range(0, K, chunk_rows):
        yield slice(start, min(start + chunk_rows, K))


def _fit_ab(ds: SnapshotDataset, basis: PolynomialBasis, rcond: float, chunk_rows: int) -> LstsqResult:
    N, m = basis.dim, ds.U.shape[1]
    if ds.K < N + m:
        raise ValueError(f"need at least {N + m} snapshots for {N} lifted states and {m} inputs, got {ds.K}")
    acc = StreamingLstsq(N + m, N)
    for sl in _row_chunks(ds.K, chunk_rows):
        phi = np.hstack([lift(basis, ds.X[sl]), ds.U[sl]])
        acc.add(phi, lift(basis, ds.X_plus[sl]))
    return acc.solve(rcond)


def fit_edmd(ds: SnapshotDataset, basis: PolynomialBasis, rcond: float = RCOND,
             chunk_rows: int = DEFAULT_CHUNK_ROWS) -> Tuple[np.ndarray, np.ndarray]:
    """Least-squares ``(A, B)`` minimising ``sum |psi(x+) - A psi(x) - B u|^2``."""
    res = _fit_ab(ds, basis, rcond, chunk_rows)
    W = res.coef
    return W[: basis.dim].T.copy(), W[basis.dim:].T.copy()


def fit_C(ds: SnapshotDataset, basis: PolynomialBasis, rcond: float = RCOND,
          chunk_rows: int = DEFAULT_CHUNK_ROWS) -> np.ndarray:
    """Least-squares output matrix ``C`` minimising ``sum |y - C psi(x)|^2``."""
    if ds.K < basis.dim:
        raise ValueError(f"need at least {basis.dim} snapshots, got {ds.K}")
    acc = StreamingLstsq(basis.dim, ds.Y.shape[1])
    for sl in _row_chunks(ds.K, chunk_rows):
        acc.add(lift(basis, ds.X[sl]), ds.Y[sl])
    return acc.solve(rcond).coef.T.copy()


def edmd_objective(ds: SnapshotDataset, basis: PolynomialBasis, A, B, relative: bool = False,
                   chunk_rows: int = DEFAULT_CHUNK_ROWS) -> float:
    """``sum |lift(x+) - A lift(x) - B u|^2``; ``relative`` divides by ``sum |lift(x+)|^2``."""
    num = den = 0.0
    for sl in _row_chunks(ds.K, chunk_rows):
        Zp = lift(basis, ds.X_plus[sl])
        num += float(np.sum((Zp - lift(basis, ds.X[sl]) @ A.T - ds.U[sl] @ B.T) ** 2))
        den += float(np.sum(Zp**2))
    return num / den if relative else num


def output_objective(ds: SnapshotDataset, basis: PolynomialBasis, C, chunk_rows: int = DEFAULT_CHUNK_ROWS) -> float:
    return float(sum(np.sum((ds.Y[sl] - lift(basis, ds.X[sl]) @ C.T) ** 2) for sl in _row_chunks(ds.K, chunk_rows)))


# --------------------------------------------------------------------------
# linear predictor


class PredictorMode(str, enum.Enum):
    DISCRETE = "discrete"
    CONTINUOUS_DIAGONAL = "continuous_diagonal"


@dataclass
class LinearPredictor:
    """Lifted linear surrogate ``z+ = A z + B u``, ``y = C z``.

    In ``CONTINUOUS_DIAGONAL`` mode ``A`` holds the continuous-time diagonal
    generator and the step multiplier is ``exp(diag(A) * Ts)``; outputs are
    the real part of ``C z``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    lift: Callable[[np.ndarray], np.ndarray]
    Ts: float
    mode: PredictorMode = PredictorMode.DISCRETE
    basis: Optional[PolynomialBasis] = None
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.mode = PredictorMode(self.mode)
        N = self.A.shape[0]
        if self.A.shape != (N, N) or self.C.shape[1] != N or self.B.shape[0] != N:
            raise ValueError(f"inconsistent predictor shapes A{self.A.shape} B{self.B.shape} C{self.C.shape}")
        if self.mode is PredictorMode.CONTINUOUS_DIAGONAL and np.count_nonzero(self.A - np.diag(np.diag(self.A))):
            raise ValueError("continuous-diagonal predictor needs a diagonal A")

    @property
    def n_lift(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.C.shape[0]

    def step_multiplier(self) -> np.ndarray:
        return np.exp(np.diag(self.A) * self.Ts)

    def output(self, z) -> np.ndarray:
        y = z @ self.C.T
        return y.real if np.iscomplexobj(y) else y

    def predict(self, x0, inputs=None, n_steps: Optional[int] = None, check_finite: bool = True) -> np.ndarray:
        """Open-loop prediction lifting once at ``x0``.

        ``x0`` may be batched ``(n, 3)``; ``inputs`` is time-major
        ``(N, [n,] m)``. Returns outputs of shape ``(N + 1, [n,] p)``.
        With ``check_finite=False`` a diverging prediction is returned as is
        instead of raising :class:`PredictionFault`.
        """
        x0 = np.asarray(x0, dtype=float)
        if inputs is not None:
            inputs = np.asarray(inputs, dtype=float)
            if inputs.shape[-1] != self.n_inputs:
                raise ValueError(f"inputs have {inputs.shape[-1]} channels, predictor expects {self.n_inputs}")
            n_steps = inputs.shape[0] if n_steps is None else n_steps
        if n_steps is None:
            raise ValueError("need an input sequence or n_steps")
        z = self.lift(x0)
        out = np.empty((n_steps + 1,) + z.shape[:-1] + (self.n_outputs,))
        out[0] = self.output(z)
        if self.mode is PredictorMode.DISCRETE:
            At, Bt = self.A.T, self.B.T
            for k in range(n_steps):
                z = z @ At
                if inputs is not None and self.n_inputs:
                    z = z + inputs[k] @ Bt
                if check_finite and not np.all(np.isfinite(z)):
                    raise PredictionFault(f"non-finite lifted state at step {k + 1}", step=k + 1)
                out[k + 1] = self.output(z)
        else:
            mult = self.step_multiplier()
            for k in range(n_steps):
                z = z * mult
                if check_finite and not np.all(np.isfinite(z)):
                    raise PredictionFault(f"non-finite lifted state at step {k + 1}", step=k + 1)
                out[k + 1] = self.output(z)
        return out


def fit_predictor(ds: SnapshotDataset, basis: PolynomialBasis, rcond: float = RCOND,
                  chunk_rows: int = DEFAULT_CHUNK_ROWS) -> LinearPredictor:
    A, B = fit_edmd(ds, basis, rcond, chunk_rows)
    C = fit_C(ds, basis, rcond, chunk_rows)
    return LinearPredictor(A, B, C, basis, ds.Ts, PredictorMode.DISCRETE, basis)


# --------------------------------------------------------------------------
# persistence


def _write_block(fh, name: str, M: np.ndarray) -> None:
    M = np.atleast_2d(M)
    fh.write(f"[{name}] {M.shape[0]} {M.shape[1]}\n")
    for row in M:
        fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _read_blocks(lines):
    blocks, i = {}, 0
    while i < len(lines):
        line = lines[i]
        if line.startswith("["):
            name, rows, cols = line[1:].replace("]", " ").split()
            rows, cols = int(rows), int(cols)
            data = [[float(v) for v in lines[i + 1 + r].split(",")] if cols else [] for r in range(rows)]
            blocks[name] = np.array(data, dtype=float).reshape(rows, cols)
            i += 1 + rows
        else:
            i += 1
    return blocks


def save_predictor(path, model: LinearPredictor, extra: Optional[Dict[str, str]] = None) -> None:
    """Text format: header lines, then row-major CSV blocks; floats use ``repr`` so they round-trip."""
    meta = dict(model.meta)
    meta.update(extra or {})
    with open(path, "w") as fh:
        fh.write(f"dims n_lift={model.n_lift} n_inputs={model.n_inputs} n_outputs={model.n_outputs}\n")
        fh.write(f"mode={model.mode.value}\n")
        fh.write(f"Ts={model.Ts!r}\n")
        for key in sorted(meta):
            fh.write(f"meta {key}={meta[key]}\n")
        if model.mode is PredictorMode.DISCRETE:
            _write_block(fh, "A", model.A)
            _write_block(fh, "B", model.B)
            _write_block(fh, "C", model.C)
        else:
            lam = np.diag(model.A).astype(complex)
            C = model.C.astype(complex)
            _write_block(fh, "A_re", lam.real[None, :])
            _write_block(fh, "A_im", lam.imag[None, :])
            _write_block(fh, "B", model.B.real)
            _write_block(fh, "C_re", C.real)
            _write_block(fh, "C_im", C.imag)
        if model.basis is not None:
            fh.write(f"basis order={model.basis.order}\n")
            _write_block(fh, "exponents", model.basis.exponents)


def read_predictor_file(path):
    """Parse a predictor file into ``(header, blocks)`` without binding a lift."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("dims "):
        raise ValueError(f"{path}: not a predictor file")
    header: Dict[str, str] = {}
    meta: Dict[str, str] = {}
    for line in lines:
        if line.startswith("["):
            continue
        if line.startswith("meta "):
            k, v = line[5:].split("=", 1)
            meta[k] = v
        elif line.startswith("dims ") or line.startswith("basis "):
            for tok in line.split()[1:]:
                k, v = tok.split("=", 1)
                header[k] = v
        elif "=" in line and "," not in line:
            k, v = line.split("=", 1)
            header[k] = v
    return header, meta, _read_blocks(lines)


def load_predictor(path, lift_fn: Optional[Callable] = None) -> LinearPredictor:
    """Load a predictor; polynomial predictors rebuild their own lift."""
    header, meta, blocks = read_predictor_file(path)
    mode = PredictorMode(header["mode"])
    Ts = float(header["Ts"])
    basis = None
    if "exponents" in blocks:
        basis = PolynomialBasis(int(header["order"]), blocks["exponents"].astype(np.int64))
    if mode is PredictorMode.DISCRETE:
        A, B, C = blocks["A"], blocks["B"], blocks["C"]
    else:
        lam = blocks["A_re"][0] + 1j * blocks["A_im"][0]
        A = np.diag(lam)
        B = blocks["B"].reshape(len(lam), -1)
        C = blocks["C_re"] + 1j * blocks["C_im"]
    B = B.reshape(A.shape[0], int(header["n_inputs"]))
    if lift_fn is None:
        if basis is None:
            raise ValueError(f"{path}: predictor has no polynomial basis; supply a lift function")
        lift_fn = basis
    return LinearPredictor(A, B, C, lift_fn, Ts, mode, basis, meta)
