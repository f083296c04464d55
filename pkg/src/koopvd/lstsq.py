"""Minimum-norm multi-output least squares for tall, badly scaled problems.

Rows arrive in chunks and are folded into a triangular factor with
Householder QR, so memory stays ``O(n^2)`` no matter how many rows there are.
The final solve runs an SVD of the column-equilibrated triangular factor and
drops singular values below ``rcond`` times the largest one. On rank
deficiency the returned solution has minimum Euclidean norm in the
equilibrated coordinates (each regressor column scaled to unit norm), which
makes it independent of how the columns are scaled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np

RCOND = 1e-10


class RankCollapse(np.linalg.LinAlgError):
    """The regressor matrix carries (almost) no information."""


@dataclass
class LstsqResult:
    coef: np.ndarray
    residual: float
    rank: int
    singular_values: np.ndarray
    n_rows: int


class StreamingLstsq:
    """Accumulate ``[Phi | T]`` row blocks into an R factor.

    The result depends on the chunk boundaries only through rounding, and is
    bitwise reproducible for a fixed chunking.
    """

    def __init__(self, n_regressors: int, n_targets: int):
        self.n = n_regressors
        self.p = n_targets
        self._R = np.zeros((0, n_regressors + n_targets))
        self.n_rows = 0

    def add(self, phi: np.ndarray, targets: np.ndarray) -> None:
        phi = np.asarray(phi, dtype=float)
        targets = np.asarray(targets, dtype=float)
        if targets.ndim == 1:
            targets = targets[:, None]
        if phi.shape[1] != self.n or targets.shape[1] != self.p or phi.shape[0] != targets.shape[0]:
            raise ValueError(
                f"chunk shapes {phi.shape}/{targets.shape} do not match ({self.n}, {self.p})"
            )
        if phi.shape[0] == 0:
            return
        block = np.vstack([self._R, np.hstack([phi, targets])])
        self._R = np.linalg.qr(block, mode="r")
        self.n_rows += phi.shape[0]

    def solve(self, rcond: float = RCOND) -> LstsqResult:
        if self.n_rows == 0:
            raise RankCollapse("no rows supplied")
        n = self.n
        R = np.zeros((n + self.p, n + self.p))
        R[: self._R.shape[0]] = self._R
        R11 = R[:n, :n]
        R1t = R[:n, n:]
        Rtt = R[n:, n:]
        col_norm = np.linalg.norm(R11, axis=0)
        scale = np.where(col_norm > 0, col_norm, 1.0)
        U, s, Vt = np.linalg.svd(R11 / scale, full_matrices=False)
        if s.size == 0 or s[0] == 0:
            raise RankCollapse("regressor matrix is zero")
        keep = s > rcond * s[0]
        rank = int(keep.sum())
        if rank <= 1 < n:
            raise RankCollapse(f"regressor matrix has numerical rank {rank} with {n} columns")
        coef_scaled = Vt[keep].T @ ((U[:, keep].T @ R1t) / s[keep, None])
        # minimum norm is taken in the equilibrated coordinates, so rescaling a
        # column (changing units of a monomial) does not change the predictions
        coef = coef_scaled / scale[:, None]
        fit_resid = R1t - R11 @ coef
        residual = float(np.sum(fit_resid**2) + np.sum(Rtt**2))
        return LstsqResult(coef, residual, rank, s, self.n_rows)


def lstsq_chunks(chunks: Iterable[Tuple[np.ndarray, np.ndarray]], n_regressors: int, n_targets: int,
                 rcond: float = RCOND) -> LstsqResult:
    acc = StreamingLstsq(n_regressors, n_targets)
    for phi, targets in chunks:
        acc.add(phi, targets)
    return acc.solve(rcond)


def lstsq(phi: np.ndarray, targets: np.ndarray, rcond: float = RCOND, chunk_rows: int = 20000) -> LstsqResult:
    """In-memory convenience wrapper around :class:`StreamingLstsq`."""
    phi = np.asarray(phi, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    chunks = ((phi[i:i + chunk_rows], targets[i:i + chunk_rows]) for i in range(0, phi.shape[0], chunk_rows))
    return lstsq_chunks(chunks, phi.shape[1], targets.shape[1], rcond)
