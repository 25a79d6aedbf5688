"""Gaussian random fields discretized by expansion optimal linear estimation.

The field has unit variance and correlation ``exp(-|z - z'|^2 / l^2)``.
Eigenpairs of the correlation matrix on a set of grid points define the
expansion; the number of retained modes is the smallest one capturing the
requested share of the total eigenvalue sum. A lognormal map turns the
Gaussian field into a positive one, e.g. a conductivity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist


def square_grid(n_per_axis: int, lower: float = 0.0, upper: float = 1.0) -> np.ndarray:
    """Tensor grid of ``n_per_axis**2`` points on ``[lower, upper]^2``."""
    t = np.linspace(lower, upper, n_per_axis)
    xx, yy = np.meshgrid(t, t, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def gaussian_correlation(a, b, corr_length: float) -> np.ndarray:
    return np.exp(-cdist(a, b, "sqeuclidean") / corr_length**2)


def lognormal_map_params(mean: float, std: float) -> tuple[float, float]:
    """``(a, b)`` such that ``exp(a + b G)`` with standard normal ``G`` has the
    given mean and standard deviation."""
    if mean <= 0 or std <= 0:
        raise ValueError("lognormal mean and std must be positive")
    b = math.sqrt(math.log1p((std / mean) ** 2))
    return math.log(mean) - 0.5 * b * b, b


@dataclass(frozen=True)
class EoleField:
    points: np.ndarray          # (n, d) grid points
    corr_length: float
    eigenvalues: np.ndarray     # all n, descending, clipped at zero
    eigenvectors: np.ndarray    # (n, M) retained modes
    threshold: float = 0.99
    mean: float = 1.0
    std: float = 0.3

    @property
    def n_terms(self) -> int:
        return self.eigenvectors.shape[1]

    @property
    def captured(self) -> float:
        """Share of the eigenvalue sum carried by the retained modes."""
        return float(self.eigenvalues[:self.n_terms].sum() / self.eigenvalues.sum())

    @property
    def map_params(self) -> tuple[float, float]:
        return lognormal_map_params(self.mean, self.std)

    def to_dict(self) -> dict:
        return {
            "points": self.points.tolist(),
            "corr_length": self.corr_length,
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenvectors": self.eigenvectors.tolist(),
            "threshold": self.threshold,
            "mean": self.mean,
            "std": self.std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EoleField:
        return cls(np.asarray(d["points"], dtype=float), float(d["corr_length"]),
                   np.asarray(d["eigenvalues"], dtype=float),
                   np.asarray(d["eigenvectors"], dtype=float).reshape(len(d["points"]), -1),
                   d.get("threshold", 0.99), d.get("mean", 1.0), d.get("std", 0.3))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> EoleField:
        return cls.from_dict(json.loads(Path(path).read_text()))


def eole_build(points, corr_length: float, threshold: float = 0.99,
               mean: float = 1.0, std: float = 0.3, n_terms: int | None = None) -> EoleField:
    """Eigendecompose the grid correlation matrix and keep the smallest
    number of modes whose eigenvalues reach ``threshold`` of the total.

    ``n_terms`` overrides the automatic count.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("grid must contain at least one point")
    if not corr_length > 0:
        raise ValueError("correlation length must be positive")
    if not 0 < threshold <= 1:
        raise ValueError("variance threshold must lie in (0, 1]")
    c = gaussian_correlation(pts, pts, corr_length)
    try:
        vals, vecs = np.linalg.eigh(c)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigendecomposition failed: {exc}") from exc
    vals, vecs = vals[::-1], vecs[:, ::-1]
    if vals[-1] < -1e-10 * vals[0]:
        raise RuntimeError(f"correlation matrix has a negative eigenvalue {vals[-1]:.3g}")
    vals = np.clip(vals, 0.0, None)
    if n_terms is None:
        share = np.cumsum(vals) / vals.sum()
        n_terms = int(np.searchsorted(share, threshold - 1e-12) + 1)
    n_terms = min(int(n_terms), int(np.sum(vals > 0)))
    return EoleField(pts, float(corr_length), vals, vecs[:, :n_terms].copy(),
                     float(threshold), float(mean), float(std))


def _projection(field: EoleField, z) -> np.ndarray:
    # (n_z, M): phi_i^T C(zeta, z) / sqrt(l_i)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    cz = gaussian_correlation(z, field.points, field.corr_length)
    return (cz @ field.eigenvectors) / np.sqrt(field.eigenvalues[:field.n_terms])


def eole_realize(field: EoleField, xi, z=None) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian field ``g`` and lognormal field ``kappa = exp(a + b g)``.

    ``xi`` holds ``M`` standard normals, or one row of them per realization;
    ``z`` defaults to the grid points. Outputs have shape ``(n_z,)`` or
    ``(n_xi, n_z)``.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != field.n_terms:
        raise ValueError(f"field has {field.n_terms} modes, got {xi.shape[-1]} coefficients")
    proj = _projection(field, field.points if z is None else z)
    g = xi @ proj.T
    a, b = field.map_params
    return g, np.exp(a + b * g)


def eole_variance(field: EoleField, z=None) -> np.ndarray:
    """Point variance of the truncated expansion (never above one)."""
    proj = _projection(field, field.points if z is None else z)
    return np.sum(proj * proj, axis=1)


def effective_conductivity(field: EoleField, xi) -> np.ndarray:
    """Harmonic mean of the lognormal field over the grid points.

    A scalar response of the whole field, used by the demonstration
    pipeline in place of a PDE solve.
    """
    _, kappa = eole_realize(field, np.atleast_2d(xi))
    return 1.0 / np.mean(1.0 / kappa, axis=1)
