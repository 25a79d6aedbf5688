"""Error estimators, cross-validation and kernel density estimation.

Variances are always the unbiased ``1/(n-1)`` estimator.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

# Relative errors below this level are indistinguishable from round-off;
# model selection treats them as ties.
TIE_FLOOR = 1e-12


@dataclass(frozen=True)
class ErrorReport:
    absolute: float
    relative: float | None
    n_points: int
    condition: str | None = None
    bias: float | None = None
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d


def semi_norm(a, b=0.0) -> float:
    """Discrete L2 semi-norm ``sqrt(mean((a - b)^2))``."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.broadcast_to(np.asarray(b, dtype=float), a.shape)
    if a.size == 0:
        raise ValueError("semi-norm of an empty set")
    d = a - b
    return float(np.sqrt(np.mean(d * d)))


def empirical_variance(y) -> float:
    y = np.asarray(y, dtype=float).ravel()
    return float(np.var(y, ddof=1)) if y.size > 1 else math.nan


def error_report(y_true, y_pred, condition: str | None = None) -> ErrorReport:
    """Absolute and variance-normalized mean-square error of ``y_pred``."""
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError("prediction and reference sizes differ")
    absolute = semi_norm(y_true, y_pred) ** 2
    flags = []
    var = empirical_variance(y_true)
    if not var > 0:
        rel = None
        flags.append("relative-undefined")
    else:
        rel = absolute / var
    bias = float(np.mean(y_pred - y_true))
    return ErrorReport(absolute, rel, y_true.size, condition, bias, tuple(flags))


def _predict(metamodel, points):
    if callable(metamodel):
        return metamodel(points)
    return metamodel.predict(points)


def generalization_error(metamodel, model_values, validation_points) -> ErrorReport:
    """Validation-set estimate of the (relative) generalization error.

    ``metamodel`` is a callable or an object with ``predict``; it is
    evaluated on ``validation_points`` and compared to ``model_values``.
    """
    model_values = np.asarray(model_values, dtype=float).ravel()
    if model_values.size < 2:
        raise ValueError("validation set needs at least two points")
    return error_report(model_values, _predict(metamodel, validation_points))


def conditional_generalization_error(metamodel, model_values, validation_points,
                                     threshold: float) -> ErrorReport:
    """Generalization error restricted to points whose model response is
    at least ``threshold``.

    The relative form is normalized by the variance of the model responses
    in that subset. ``bias`` is the mean signed residual on the subset.
    """
    model_values = np.asarray(model_values, dtype=float).ravel()
    mask = model_values >= threshold
    if not np.any(mask):
        raise ValueError(f"no exceedances of threshold {threshold} in the validation set")
    pts = np.asarray(validation_points)[mask]
    return error_report(model_values[mask], _predict(metamodel, pts), f">= {threshold!r}")


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle of ``range(n)`` split into ``k`` contiguous folds."""
    if k < 2:
        raise ValueError("k-fold cross-validation needs k >= 2")
    if n < k:
        raise ValueError(f"cannot split {n} points into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, k)


@dataclass
class CvResult:
    errors: np.ndarray
    fold_errors: np.ndarray
    normalized: np.ndarray
    failed: list[str]

    @property
    def flags(self) -> list[str]:
        out = list(self.failed)
        if not np.all(self.normalized):
            out.append("absolute-fallback: a held-out fold had zero response variance")
        return out


def kfold_cv(trainer: Callable, u, y, k: int = 3, seed: int = 0) -> CvResult:
    """k-fold cross-validation error for one or several candidates.

    ``trainer(u_train, y_train)`` returns a predictor or a sequence of
    predictors (one per candidate); each predictor maps points to responses.
    The held-out error of every fold is normalized by the variance of that
    fold's responses; if the variance is zero (or the fold has one point)
    the absolute error is used and flagged. A trainer that raises marks all
    its candidates as failed (NaN) on that fold.
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    folds = kfold_indices(y.size, k, seed)
    rows: list[list[float]] = []
    normalized = np.ones(k, dtype=bool)
    failed = []
    n_cand = None
    for f, test in enumerate(folds):
        train = np.setdiff1d(np.arange(y.size), test)
        var = empirical_variance(y[test])
        scale = var if var > 0 else 1.0
        normalized[f] = var > 0
        try:
            preds = trainer(u[train], y[train])
            if callable(preds) or hasattr(preds, "predict"):
                preds = [preds]
            errs = [semi_norm(y[test], _predict(p, u[test])) ** 2 / scale for p in preds]
            n_cand = len(errs)
        except Exception as exc:  # noqa: BLE001 - per-fold failures are recorded
            failed.append(f"fold {f}: {exc}")
            errs = None
        rows.append(errs)
    if n_cand is None:
        raise RuntimeError("trainer failed on every fold: " + "; ".join(failed))
    fold_errors = np.array([r if r is not None else [math.nan] * n_cand for r in rows])
    return CvResult(fold_errors.mean(axis=0), fold_errors, normalized, failed)


def kde(samples, grid, bandwidth: float | None = None, chunk: int = 2_000_000) -> np.ndarray:
    """Gaussian kernel density estimate evaluated on ``grid``.

    Uses Silverman's rule ``0.9 min(sd, IQR/1.34) n^(-1/5)`` unless a
    bandwidth is given.
    """
    x = np.asarray(samples, dtype=float).ravel()
    grid = np.asarray(grid, dtype=float)
    if x.size < 2:
        raise ValueError("KDE needs at least two samples")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValueError("samples have zero spread")
    dens = np.zeros(grid.size)
    g = grid.ravel()
    step = max(1, chunk // max(g.size, 1))
    for start in range(0, x.size, step):
        t = (g[:, None] - x[None, start:start + step]) / h
        dens += np.exp(-0.5 * t * t).sum(axis=1)
    return (dens / (x.size * h * math.sqrt(2 * math.pi))).reshape(grid.shape)


def silverman_bandwidth(x) -> float:
    x = np.asarray(x, dtype=float).ravel()
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if not spread > 0:
        spread = sd
    if not spread > 0:
        raise ValueError("samples have zero spread")
    return 0.9 * spread * x.size ** (-0.2)


def select_min(scores: Sequence[float], floor: float = TIE_FLOOR) -> int:
    """Index of the smallest score, earliest wins on ties.

    Scores are compared after flooring at ``floor`` and within a relative
    tolerance of 1e-9, so round-off-level differences resolve to the
    earliest (simplest) candidate.
    """
    s = np.maximum(np.asarray(scores, dtype=float), floor)
    s = np.where(np.isnan(s), np.inf, s)
    best = float(np.min(s))
    if not math.isfinite(best):
        raise ValueError("no finite candidate score")
    return int(np.flatnonzero(s <= best * (1 + 1e-9))[0])
