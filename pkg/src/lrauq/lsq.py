"""Dense least-squares kernel shared by the LRA and PCE solvers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RANK_RTOL = 1e-12


@dataclass(frozen=True)
class LsqSolution:
    coefficients: np.ndarray
    residual_norm: float
    effective_rank: int
    singular_values: np.ndarray
    hat_diagonal: np.ndarray | None = None

    @property
    def full_rank(self) -> bool:
        return self.effective_rank == self.coefficients.size


def solve_ols(a, y, want_leverage: bool = False, rtol: float = RANK_RTOL) -> LsqSolution:
    """Minimum-norm least-squares solution of ``a @ c ~= y`` via the SVD.

    Singular values below ``rtol * s_max`` are treated as zero, so
    rank-deficient systems return the minimum-norm minimizer. With
    ``want_leverage`` the diagonal of the hat matrix ``A (A^T A)^+ A^T`` is
    returned as well.
    """
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if a.ndim != 2 or a.shape[0] != y.size:
        raise ValueError(f"shape mismatch: A is {a.shape}, y has {y.size} entries")
    n, p = a.shape
    if n < 1 or p < 1:
        raise ValueError("least squares needs at least one row and one column")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite entries in least-squares system")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    tol = rtol * s[0] if s.size and s[0] > 0 else 0.0
    rank = int(np.sum(s > tol)) if s[0] > 0 else 0
    ur, sr, vr = u[:, :rank], s[:rank], vt[:rank]
    c = vr.T @ ((ur.T @ y) / sr)
    resid = float(np.linalg.norm(y - a @ c))
    h = np.sum(ur * ur, axis=1) if want_leverage else None
    return LsqSolution(c, resid, rank, s, h)
