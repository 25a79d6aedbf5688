"""Orthonormal univariate polynomial families and their tensorization."""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np
from scipy.special import ndtr

MAX_DEGREE = 30


class PolyFamily(str, enum.Enum):
    """Orthonormal polynomial family.

    HERMITE is orthonormal with respect to the standard normal density
    (probabilists' convention, ``He_k / sqrt(k!)``); LEGENDRE with respect to
    the uniform density 1/2 on ``[-1, 1]`` (``sqrt(2k+1) P_k``).
    """

    HERMITE = "hermite"
    LEGENDRE = "legendre"


def basic_variable(family: PolyFamily, u):
    """Map standard-normal coordinates to the family's reference variable."""
    family = PolyFamily(family)
    if family is PolyFamily.HERMITE:
        return np.asarray(u, dtype=float)
    return 2.0 * ndtr(u) - 1.0


def univariate_table(family: PolyFamily, degree: int, x) -> np.ndarray:
    """Evaluate orthonormal polynomials of degrees ``0..degree`` at ``x``.

    Returns an array of shape ``x.shape + (degree + 1,)``.
    """
    family = PolyFamily(family)
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    if degree > MAX_DEGREE:
        raise ValueError(f"degree {degree} exceeds the supported maximum {MAX_DEGREE}")
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (degree + 1,))
    out[..., 0] = 1.0
    if degree == 0:
        return out
    if family is PolyFamily.HERMITE:
        # psi_{k+1} = (x psi_k - sqrt(k) psi_{k-1}) / sqrt(k+1)
        out[..., 1] = x
        for k in range(1, degree):
            out[..., k + 1] = (x * out[..., k] - np.sqrt(k) * out[..., k - 1]) / np.sqrt(k + 1)
        return out
    # Legendre: (k+1) P_{k+1} = (2k+1) x P_k - k P_{k-1}, normalized afterwards
    out[..., 1] = x
    for k in range(1, degree):
        out[..., k + 1] = ((2 * k + 1) * x * out[..., k] - k * out[..., k - 1]) / (k + 1)
    out *= np.sqrt(2.0 * np.arange(degree + 1) + 1.0)
    return out


def eval_univariate(family: PolyFamily, degree: int, x):
    """Value of the orthonormal polynomial of the given degree at ``x``."""
    return univariate_table(family, degree, x)[..., degree]


def _families(families, dim: int) -> list[PolyFamily]:
    if isinstance(families, (str, PolyFamily)):
        return [PolyFamily(families)] * dim
    fams = [PolyFamily(f) for f in families]
    if len(fams) != dim:
        raise ValueError(f"expected {dim} families, got {len(fams)}")
    return fams


def eval_multivariate(families, alpha: Sequence[int], x) -> float | np.ndarray:
    """Tensor-product orthonormal polynomial ``prod_i P_{alpha_i}(x_i)``.

    ``x`` may be one point or an ``(n, M)`` array.
    """
    alpha = np.asarray(alpha, dtype=int)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != alpha.size:
        raise ValueError(f"multi-index has {alpha.size} entries but point has {x.shape[-1]}")
    if np.any(alpha < 0):
        raise ValueError("multi-index entries must be nonnegative")
    fams = _families(families, alpha.size)
    val = np.ones(x.shape[:-1])
    for i, (fam, a) in enumerate(zip(fams, alpha)):
        if a:
            val = val * eval_univariate(fam, int(a), x[..., i])
    return val


def q_norm(alpha: Sequence[int], q: float) -> float:
    """Hyperbolic q-quasi-norm ``(sum alpha_i^q)^(1/q)``."""
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    a = np.asarray(alpha, dtype=float)
    return float(np.sum(a[a > 0] ** q) ** (1.0 / q))


def design_matrix(families, indices, points) -> np.ndarray:
    """Regression matrix ``A[i, j] = Psi_{indices[j]}(points[i])``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, dim = points.shape
    idx = np.asarray(indices, dtype=int).reshape(-1, dim) if len(indices) else np.zeros((0, dim), int)
    if idx.shape[0] == 0:
        return np.empty((n, 0))
    fams = _families(families, dim)
    pmax = idx.max(axis=0)
    out = np.ones((n, idx.shape[0]))
    for i in range(dim):
        if pmax[i] == 0:
            continue
        table = univariate_table(fams[i], int(pmax[i]), points[:, i])
        out *= table[:, idx[:, i]]
    return out
