"""Data-driven Koopman eigenfunctions on a constant-energy initial set.

Pipeline: constant-energy ellipsoid -> simulated trajectory bank -> DMD
eigenvalues -> eigenvalue lattice -> thin-plate-spline observables ->
eigenfunction values along trajectories -> least-squares output matrix ->
diagonal continuous-time predictor with nearest-neighbour lifting.

Eigenfunction values are never materialised for the whole bank. Along
trajectory ``j`` the value for ``(lam, g)`` at sample ``k`` is
``exp(lam * k * Ts) * g(x0_j)``, so the bank stores ``g(x0_j)`` and the
eigenvalues and expands on demand.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .dynamics import SimulationFault, dynamics_3state, kinetic_energy, simulate
from .edmd import LinearPredictor, PredictorMode
from .lstsq import RCOND, RankCollapse, lstsq
from .params import TireParams, VehicleParams

DEFAULT_ENERGY = 500e3
DEFAULT_MAX_TOTAL_ORDER = 5
DEFAULT_RE_CAP = 0.5
MAX_LATTICE_POINTS = 2000
DEFAULT_N_CENTERS = 100
DEDUP_TOL = 1e-12
OUTPUT_RCOND = 1e-3
"""SVD cutoff for the output fit; tighter cutoffs blow up once predictions run past the bank horizon."""


# --------------------------------------------------------------------------
# constant-energy set


@dataclass(frozen=True)
class EnergySet:
    E: float
    states: np.ndarray
    n_theta: int
    n_phi: int
    semi_axes: tuple


def energy_semi_axes(E: float, vp: VehicleParams):
    vmax = np.sqrt(2.0 * E / vp.m_v)
    return (vmax, vmax, np.sqrt(2.0 * E / vp.J_zz))


def generate_energy_set(E: float, vp: VehicleParams, n_theta: int = 21, n_phi: int = 21) -> EnergySet:
    """States on ``0.5 m (vx^2 + vy^2) + 0.5 J psi_dot^2 = E``.

    ``theta`` covers the full turn without repeating the seam, ``phi`` covers
    the open interval ``(-pi/2, pi/2)`` so no two states coincide at the poles.
    Ordering is theta-major.
    """
    if not E > 0:
        raise ValueError(f"energy level must be > 0, got {E}")
    a, _, c = energy_semi_axes(E, vp)
    theta = 2.0 * np.pi * np.arange(n_theta) / n_theta
    phi = np.linspace(-np.pi / 2, np.pi / 2, n_phi + 2)[1:-1]
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    th, ph = th.ravel(), ph.ravel()
    states = np.stack([a * np.cos(th) * np.cos(ph), a * np.sin(th) * np.cos(ph), c * np.sin(ph)], axis=-1)
    return EnergySet(float(E), states, n_theta, n_phi, energy_semi_axes(E, vp))


def sample_in_ellipsoid(n: int, semi_axes, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples from the solid ellipsoid with the given semi-axes."""
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    radius = rng.random(n) ** (1.0 / 3.0)
    return d * radius[:, None] * np.asarray(semi_axes)


# --------------------------------------------------------------------------
# eigenvalue lattice and observables


@dataclass(frozen=True)
class EigenvalueLattice:
    base: np.ndarray
    values: np.ndarray
    max_total_order: int
    cap: float

    def __len__(self):
        return len(self.values)


def _dedup(values, tol=DEDUP_TOL):
    out = []
    for v in values:
        if not any(abs(v - w) <= tol * max(1.0, abs(w)) for w in out):
            out.append(v)
    return out


def build_eigenvalue_lattice(base, max_total_order: int = DEFAULT_MAX_TOTAL_ORDER, cap: float = DEFAULT_RE_CAP,
                             max_points: int = MAX_LATTICE_POINTS) -> EigenvalueLattice:
    """Non-negative integer combinations of ``base`` with total order 1..max.

    The result is conjugate-closed, deduplicated, stripped of entries with
    real part above ``cap``, and sorted by (real part descending, |imag|,
    imag) so conjugate partners sit next to each other.
    """
    if max_total_order < 1:
        raise ValueError("max_total_order must be >= 1")
    base = np.asarray(base, dtype=complex).ravel()
    combos = []
    for total in range(1, max_total_order + 1):
        for counts in itertools.combinations_with_replacement(range(len(base)), total):
            combos.append(sum(base[i] for i in counts))
    # deduplicate upper-half-plane representatives, then mirror: closure is exact
    reps = []
    for v in _dedup([complex(v.real, abs(v.imag)) for v in combos]):
        if v.imag <= DEDUP_TOL * max(1.0, abs(v)):
            v = complex(v.real, 0.0)
        if v.real <= cap:
            reps.append(v)
    values = reps + [v.conjugate() for v in reps if v.imag != 0]
    if not values:
        raise ValueError("eigenvalue lattice is empty after applying the stability cap")
    if len(values) > max_points:
        raise ValueError(f"eigenvalue lattice has {len(values)} points, ceiling is {max_points}")
    values.sort(key=lambda v: (-v.real, abs(v.imag), v.imag))
    return EigenvalueLattice(base, np.array(values, dtype=complex), int(max_total_order), float(cap))


@dataclass(frozen=True)
class ObservableSet:
    """Thin-plate-spline functions ``g(x) = r^2 log r`` around fixed centers."""

    centers: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, 3)
        if len(c) < 1 or not np.all(np.isfinite(c)):
            raise ValueError("need at least one finite center")
        object.__setattr__(self, "centers", c)

    def __len__(self):
        return len(self.centers)

    def __call__(self, x):
        return tps(x, self.centers)


def tps(x, centers):
    """``r^2 log r`` with ``r = |x - center|``; zero at ``r = 0``.

    Broadcasts ``x`` of shape ``(..., 3)`` against ``centers`` of shape
    ``(n, 3)`` to ``(..., n)``; a single center of shape ``(3,)`` yields a
    scalar per point.
    """
    x = np.asarray(x, dtype=float)
    centers = np.asarray(centers, dtype=float)
    if centers.ndim == 1:
        diff = x - centers
    else:
        diff = x[..., None, :] - centers
    r2 = np.sum(diff * diff, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 0.5 * r2 * np.log(r2)
    return np.where(r2 > 0, out, 0.0)


def make_observables(states, n_centers: int = DEFAULT_N_CENTERS, seed: int = 0) -> ObservableSet:
    """Draw centers from a per-coordinate normal fitted to ``states``."""
    if n_centers < 1:
        raise ValueError("need at least one center")
    states = np.asarray(states, dtype=float).reshape(-1, 3)
    mu = states.mean(axis=0)
    sigma = states.std(axis=0)
    rng = np.random.default_rng(seed)
    return ObservableSet(mu + sigma * rng.standard_normal((n_centers, 3)))


# --------------------------------------------------------------------------
# trajectory bank


@dataclass
class TrajectoryBank:
    """Trajectories from the energy set plus their eigenfunction values.

    ``states`` has shape ``(n_traj, n_samples, 3)``. Flattened sample index is
    ``traj * n_samples + k``. After :func:`evaluate_eigenfunctions`,
    ``eigenvalues`` and ``g0`` (shape ``(n_traj, N_g)``) define every stored
    value; lifted vectors use lambda-major, g-minor ordering.
    """

    states: np.ndarray
    Ts: float
    T: float
    inputs: np.ndarray
    eigenvalues: Optional[np.ndarray] = None
    observables: Optional[ObservableSet] = None
    g0: Optional[np.ndarray] = None
    meta: Dict[str, str] = field(default_factory=dict)
    _tree: Optional[cKDTree] = field(default=None, repr=False, compare=False)

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]

    @property
    def n_samples(self) -> int:
        return self.states.shape[1]

    @property
    def flat_states(self) -> np.ndarray:
        return self.states.reshape(-1, 3)

    @property
    def initial_states(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def n_lift(self) -> int:
        self._require_psi()
        return len(self.eigenvalues) * self.g0.shape[1]

    @property
    def lifted_eigenvalues(self) -> np.ndarray:
        """Eigenvalue of each lifted coordinate (lambda-major, g-minor)."""
        self._require_psi()
        return np.repeat(self.eigenvalues, self.g0.shape[1])

    def _require_psi(self):
        if self.eigenvalues is None or self.g0 is None:
            raise ValueError("eigenfunction values not evaluated; call evaluate_eigenfunctions first")

    def psi(self, flat_index) -> np.ndarray:
        """Stored lifted vectors for flattened sample indices, shape ``(..., N_psi)``."""
        self._require_psi()
        flat_index = np.asarray(flat_index)
        traj, k = np.divmod(flat_index, self.n_samples)
        growth = np.exp(np.multiply.outer(k * self.Ts, self.eigenvalues))
        out = growth[..., :, None] * self.g0[traj][..., None, :]
        return out.reshape(flat_index.shape + (-1,))

    def psi_at(self, traj: int, k: int) -> np.ndarray:
        return self.psi(traj * self.n_samples + k)

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            if self.flat_states.shape[0] == 0:
                raise ValueError("empty trajectory bank")
            self._tree = cKDTree(self.flat_states)
        return self._tree

    def nearest_index(self, x) -> np.ndarray:
        """Flattened index of the nearest bank sample; ties go to the lowest index."""
        x = np.asarray(x, dtype=float)
        pts = x.reshape(-1, 3)
        flat = self.flat_states
        if len(flat) == 1:
            return np.zeros(x.shape[:-1], dtype=np.int64)
        dist, idx = self.tree.query(pts, k=2)
        best = np.asarray(idx[:, 0], dtype=np.int64)
        # the tree returns an arbitrary member of a tie; rescan the closed ball exactly
        for i in np.flatnonzero(dist[:, 1] <= dist[:, 0] * (1 + 1e-12)):
            p = pts[i]
            cand = np.asarray(sorted(self.tree.query_ball_point(p, r=dist[i, 0] * (1 + 1e-12) + 1e-300)))
            dd = np.sum((flat[cand] - p) ** 2, axis=1)
            best[i] = cand[np.flatnonzero(dd == dd.min())[0]]
        idx = best
        return idx.reshape(x.shape[:-1])

    def nearest_distance(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        dist, _ = self.tree.query(x.reshape(-1, 3), k=1)
        return dist.reshape(x.shape[:-1])

    def nn_lift(self, x) -> np.ndarray:
        return nn_lift(x, self)


def build_trajectory_bank(energy_set: EnergySet, vp: VehicleParams, tp: TireParams, T: float = 1.0,
                          Ts: float = 0.01, inputs=(0.0, 0.0, 0.0, 0.0)) -> TrajectoryBank:
    """Simulate the slip-input model from every energy-set state with held inputs."""
    n_steps = int(round(T / Ts))
    if not np.isclose(n_steps * Ts, T, rtol=0, atol=1e-9 * max(1.0, T)):
        raise ValueError(f"T={T} is not an integer multiple of Ts={Ts}")
    u = np.broadcast_to(np.asarray(inputs, dtype=float), (len(energy_set.states), 4))
    f = lambda x, uu: dynamics_3state(x, uu, vp, tp)
    traj = simulate(f, energy_set.states, np.broadcast_to(u, (n_steps,) + u.shape), Ts)
    states = np.ascontiguousarray(np.moveaxis(traj, 0, 1))
    meta = {"E": repr(energy_set.E), "n_theta": str(energy_set.n_theta), "n_phi": str(energy_set.n_phi)}
    return TrajectoryBank(states, float(Ts), float(T), np.asarray(inputs, dtype=float), meta=meta)


# --------------------------------------------------------------------------
# DMD eigenvalues


def dmd_eigenvalues(bank_or_states, Ts: Optional[float] = None, rcond: float = RCOND) -> np.ndarray:
    """Continuous-time eigenvalues of the least-squares one-step map on raw states.

    Accepts a :class:`TrajectoryBank` or an array of trajectories of shape
    ``(n_traj, n_samples, n)`` together with ``Ts``.
    """
    if isinstance(bank_or_states, TrajectoryBank):
        states, Ts = bank_or_states.states, bank_or_states.Ts
    else:
        states = np.asarray(bank_or_states, dtype=float)
        if Ts is None:
            raise ValueError("Ts is required when passing raw trajectories")
    if states.size == 0 or states.shape[1] < 2:
        raise ValueError("need at least one trajectory with two samples")
    n = states.shape[-1]
    X = states[:, :-1].reshape(-1, n)
    Xp = states[:, 1:].reshape(-1, n)
    res = lstsq(X, Xp, rcond=rcond)
    if res.rank < n:
        raise RankCollapse(f"snapshot matrix has rank {res.rank} < {n}")
    mu = np.linalg.eigvals(res.coef.T)
    return np.log(mu.astype(complex)) / Ts


# --------------------------------------------------------------------------
# eigenfunctions, lifting and output fit


def evaluate_eigenfunctions(bank: TrajectoryBank, lattice: EigenvalueLattice, observables: ObservableSet) -> TrajectoryBank:
    """Attach eigenvalues and ``g(x0)`` values to the bank (in place, returned)."""
    lam = np.asarray(lattice.values, dtype=complex)
    horizon = (bank.n_samples - 1) * bank.Ts
    if np.any(lam.real * horizon > 700):
        raise OverflowError("eigenvalue real part too large for the bank horizon")
    bank.eigenvalues = lam
    bank.observables = observables
    bank.g0 = observables(bank.initial_states)
    return bank


def nn_lift(x, bank: TrajectoryBank) -> np.ndarray:
    """Lifted vector of the nearest bank sample to ``x`` (Euclidean, SI units)."""
    return bank.psi(bank.nearest_index(x))


def _time_features(lam: np.ndarray, n_samples: int, Ts: float):
    """Real time-feature matrix and the map back to complex coefficients.

    Real eigenvalues contribute ``exp(lam k Ts)``; each conjugate pair
    contributes the real and imaginary part of its upper member once.
    Returns ``(T, kinds)`` where ``kinds[i]`` is ``("real", col)``,
    ``("pair", col_re, col_im)`` or ``("conj", partner_index)``.
    """
    k = np.arange(n_samples) * Ts
    cols, kinds = [], []
    for i, l in enumerate(lam):
        if l.imag == 0:
            kinds.append(("real", len(cols)))
            cols.append(np.exp(l.real * k))
            continue
        partner = next((j for j in range(len(lam)) if j != i and lam[j] == np.conj(l)), None)
        if partner is None:
            raise ValueError(f"eigenvalue {l} has no conjugate partner")
        if l.imag > 0:
            e = np.exp(l * k)
            kinds.append(("pair", len(cols), len(cols) + 1))
            cols += [e.real, e.imag]
        else:
            kinds.append(("conj", partner))
    return np.stack(cols, axis=1), kinds


def _complex_coefficients(W: np.ndarray, kinds, n_g: int) -> np.ndarray:
    """Map real solution ``W`` (p, N_g, n_t) onto complex ``C`` (p, N_lambda * N_g)."""
    p = W.shape[0]
    C = np.zeros((p, len(kinds), n_g), dtype=complex)
    for i, kind in enumerate(kinds):
        if kind[0] == "real":
            C[:, i] = W[:, :, kind[1]]
        elif kind[0] == "pair":
            c = W[:, :, kind[1]] - 1j * W[:, :, kind[2]]
            C[:, i] = 0.5 * c
    for i, kind in enumerate(kinds):
        if kind[0] == "conj":
            C[:, i] = np.conj(C[:, kind[1]])
    return C.reshape(p, -1)


def _kron_min_norm(G: np.ndarray, T: np.ndarray, Y: np.ndarray, rcond: float) -> np.ndarray:
    """Minimum-norm ``W`` for ``min sum_o |Y_o - G W_o T^T|_F`` with an SVD cutoff.

    Singular values of the Kronecker product are products of the factors', so
    the relative cutoff and column equilibration carry over exactly.
    """
    dG = np.linalg.norm(G, axis=0)
    dT = np.linalg.norm(T, axis=0)
    dG = np.where(dG > 0, dG, 1.0)
    dT = np.where(dT > 0, dT, 1.0)
    Ug, sg, Vgt = np.linalg.svd(G / dG, full_matrices=False)
    Ut, st, Vtt = np.linalg.svd(T / dT, full_matrices=False)
    S = np.outer(sg, st)
    smax = S.max() if S.size else 0.0
    if smax == 0:
        raise RankCollapse("eigenfunction features are identically zero")
    keep = S > rcond * smax
    if keep.sum() <= 1 < G.shape[1] * T.shape[1]:
        raise RankCollapse("eigenfunction feature matrix has numerical rank <= 1")
    inv = np.where(keep, 1.0 / np.where(keep, S, 1.0), 0.0)
    W = np.empty((Y.shape[0], G.shape[1], T.shape[1]))
    for o in range(Y.shape[0]):
        core = (Ug.T @ Y[o] @ Ut) * inv
        W[o] = (Vgt.T @ core @ Vtt) / np.outer(dG, dT)
    return W


def _dense_features(bank: TrajectoryBank, T: np.ndarray, flat_index: np.ndarray) -> np.ndarray:
    traj, k = np.divmod(flat_index, bank.n_samples)
    return (bank.g0[traj][:, :, None] * T[k][:, None, :]).reshape(len(flat_index), -1)


def fit_output_matrix(bank: TrajectoryBank, target=None, rcond: float = OUTPUT_RCOND, method: str = "auto") -> np.ndarray:
    """Least-squares complex ``C`` with ``Re(C psi_hat(x_i)) ~ target_i`` over all bank samples.

    ``target`` defaults to the states themselves; it may be an array of shape
    ``(n_traj, n_samples, p)`` or a callable on states. ``method`` is
    ``"kron"`` (factored solve, valid when every bank sample is its own
    nearest neighbour), ``"dense"`` or ``"auto"``.
    """
    bank._require_psi()
    if target is None:
        Y = bank.states
    elif callable(target):
        Y = np.asarray(target(bank.states), dtype=float)
    else:
        Y = np.asarray(target, dtype=float)
    if Y.ndim == 2:
        Y = Y[..., None]
    M = bank.n_traj * bank.n_samples
    T, kinds = _time_features(bank.eigenvalues, bank.n_samples, bank.Ts)
    n_g = bank.g0.shape[1]
    nn = bank.nearest_index(bank.flat_states)
    self_mapped = np.array_equal(nn, np.arange(M))
    if method == "auto":
        method = "kron" if self_mapped else "dense"
    if method == "kron":
        if not self_mapped:
            raise ValueError("factored fit needs distinct bank samples")
        W = _kron_min_norm(bank.g0, T, np.moveaxis(Y, -1, 0), rcond)
    elif method == "dense":
        phi = _dense_features(bank, T, nn)
        res = lstsq(phi, Y.reshape(M, -1), rcond=rcond)
        W = res.coef.T.reshape(-1, n_g, T.shape[1])
    else:
        raise ValueError(f"unknown method {method!r}")
    return _complex_coefficients(W, kinds, n_g)


def bank_output_residual(bank: TrajectoryBank, C: np.ndarray, target=None) -> float:
    Y = bank.states if target is None else np.asarray(target, dtype=float)
    if Y.ndim == 2:
        Y = Y[..., None]
    total = 0.0
    for j in range(bank.n_traj):
        idx = bank.nearest_index(bank.states[j])
        pred = (bank.psi(idx) @ C.T).real
        total += float(np.sum((Y[j] - pred) ** 2))
    return total


def build_predictor(bank: TrajectoryBank, C: np.ndarray, Ts: Optional[float] = None) -> LinearPredictor:
    """Diagonal continuous-time predictor lifting through ``nn_lift`` on ``bank``."""
    lam = bank.lifted_eigenvalues
    if C.shape[1] != len(lam):
        raise ValueError(f"C has {C.shape[1]} columns, bank lifts to {len(lam)}")
    Ts = bank.Ts if Ts is None else Ts
    A = np.diag(lam)
    B = np.zeros((len(lam), 0))
    return LinearPredictor(A, B, np.asarray(C, dtype=complex), bank.nn_lift, Ts, PredictorMode.CONTINUOUS_DIAGONAL)


def eigen_pipeline(vp: VehicleParams, tp: TireParams, E: float = DEFAULT_ENERGY, n_theta: int = 21,
                   n_phi: int = 21, T: float = 1.0, Ts: float = 0.01, inputs=(0.0, 0.0, 0.0, 0.0),
                   max_total_order: int = DEFAULT_MAX_TOTAL_ORDER, cap: float = DEFAULT_RE_CAP,
                   n_centers: int = DEFAULT_N_CENTERS, seed: int = 0, rcond: float = OUTPUT_RCOND):
    """Energy set -> bank -> DMD -> lattice -> observables -> output fit -> predictor."""
    energy_set = generate_energy_set(E, vp, n_theta, n_phi)
    bank = build_trajectory_bank(energy_set, vp, tp, T, Ts, inputs)
    lattice = build_eigenvalue_lattice(dmd_eigenvalues(bank), max_total_order, cap)
    evaluate_eigenfunctions(bank, lattice, make_observables(bank.flat_states, n_centers, seed))
    bank.meta.update({"seed": str(seed), "max_total_order": str(max_total_order), "cap": repr(float(cap))})
    C = fit_output_matrix(bank, rcond=rcond)
    return bank, build_predictor(bank, C), energy_set


# --------------------------------------------------------------------------
# bank persistence

BANK_STATES_HEADER = ("traj_id", "k", "vx", "vy", "psidot")


def save_bank(states_path, psi_path, bank: TrajectoryBank) -> None:
    """States as ``traj_id,k,vx,vy,psidot`` CSV; eigenfunction data as a text block file.

    Only ``g(x0)`` per trajectory is stored for the eigenfunctions; every
    other value follows from ``exp(lam k Ts) g(x0)``.
    """
    from .edmd import _write_block

    bank._require_psi()
    with open(states_path, "w") as fh:
        fh.write(",".join(BANK_STATES_HEADER) + "\n")
        for j in range(bank.n_traj):
            for k in range(bank.n_samples):
                fh.write(f"{j},{k}," + ",".join(f"{v:.17g}" for v in bank.states[j, k]) + "\n")
    with open(psi_path, "w") as fh:
        fh.write(f"bank n_traj={bank.n_traj} n_samples={bank.n_samples}\n")
        fh.write(f"Ts={bank.Ts!r}\nT={bank.T!r}\n")
        fh.write("inputs=" + ";".join(repr(float(v)) for v in bank.inputs) + "\n")
        for key in sorted(bank.meta):
            fh.write(f"meta {key}={bank.meta[key]}\n")
        lam = np.asarray(bank.eigenvalues, dtype=complex)
        _write_block(fh, "eigenvalues", np.stack([lam.real, lam.imag], axis=1))
        _write_block(fh, "centers", bank.observables.centers)
        _write_block(fh, "g0", bank.g0)


def load_bank(states_path, psi_path) -> TrajectoryBank:
    from .edmd import _read_blocks

    lines = open(psi_path).read().splitlines()
    if not lines or not lines[0].startswith("bank "):
        raise ValueError(f"{psi_path}: not a trajectory bank file")
    dims = dict(tok.split("=", 1) for tok in lines[0].split()[1:])
    n_traj, n_samples = int(dims["n_traj"]), int(dims["n_samples"])
    head, meta = {}, {}
    for line in lines[1:]:
        if line.startswith("meta "):
            k, v = line[5:].split("=", 1)
            meta[k] = v
        elif "=" in line and not line.startswith("["):
            k, v = line.split("=", 1)
            head[k] = v
    blocks = _read_blocks(lines)
    with open(states_path) as fh:
        if tuple(fh.readline().strip().split(",")) != BANK_STATES_HEADER:
            raise ValueError(f"{states_path}: expected header {','.join(BANK_STATES_HEADER)}")
    data = np.loadtxt(states_path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != n_traj * n_samples:
        raise ValueError(f"{states_path}: {data.shape[0]} rows, bank file declares {n_traj}x{n_samples}")
    states = data[:, 2:5].reshape(n_traj, n_samples, 3)
    lam = blocks["eigenvalues"][:, 0] + 1j * blocks["eigenvalues"][:, 1]
    inputs = np.array([float(v) for v in head["inputs"].split(";")])
    g0 = blocks["g0"]
    if g0.shape[0] != n_traj:
        raise ValueError(f"{psi_path}: g0 has {g0.shape[0]} rows for {n_traj} trajectories")
    return TrajectoryBank(states, float(head["Ts"]), float(head["T"]), inputs, lam,
                          ObservableSet(blocks["centers"]), g0, meta)
