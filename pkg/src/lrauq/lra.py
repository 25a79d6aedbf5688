"""Canonical low-rank approximations built by greedy alternated least squares.

A rank-R approximation is

    Y ~= sum_l b_l prod_i v_l^(i)(U_i),   v_l^(i)(u) = sum_k z_{k,l}^(i) P_k^(i)(u)

with orthonormal univariate polynomials ``P_k^(i)``. Ranks are added one at a
time: a *correction step* fits a new rank-one term to the current residual
by sweeping over the dimensions (each sweep solves one small least-squares
problem per dimension with the other dimensions frozen), and an *updating
step* refits all weights ``b`` against the model responses.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .lsq import solve_ols
from .metrics import TIE_FLOOR, empirical_variance, kfold_cv, select_min
from .polybasis import PolyFamily, basic_variable, univariate_table
from .probcore import ExperimentalDesign, InputModel, to_standard

PREDICT_CHUNK = 100_000


@dataclass(frozen=True)
class RankOneTerm:
    """Per-dimension coefficient vectors ``z^(i)`` of one rank-one term."""

    z: tuple[np.ndarray, ...]

    def __post_init__(self):
        zs = tuple(np.asarray(v, dtype=float).ravel() for v in self.z)
        if not zs:
            raise ValueError("a rank-one term needs at least one dimension")
        if not all(np.all(np.isfinite(v)) for v in zs):
            raise ValueError("rank-one term has non-finite coefficients")
        object.__setattr__(self, "z", zs)

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(v.size - 1 for v in self.z)


@dataclass(frozen=True)
class LraConfig:
    r_max: int = 10
    degrees: tuple[int, ...] = (1, 2, 3)
    max_sweeps: int = 50
    min_err_decrease: float = 1e-6
    cv_folds: int = 3
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.r_max < 1:
            raise ValueError("r_max must be >= 1")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if not self.min_err_decrease > 0:
            raise ValueError("min_err_decrease must be > 0")
        if not self.degrees:
            raise ValueError("degree grid is empty")
        object.__setattr__(self, "degrees", tuple(int(p) for p in self.degrees))


@dataclass
class CorrectionResult:
    term: RankOneTerm
    sweeps: int
    error: float
    reason: str
    history: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class LraModel:
    """Rank-R canonical decomposition on orthonormal polynomial bases."""

    terms: tuple[RankOneTerm, ...]
    b: np.ndarray
    families: tuple[PolyFamily, ...]
    input_model: InputModel | None = None
    empirical_error: float | None = None
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        terms = tuple(self.terms)
        b = np.asarray(self.b, dtype=float).ravel()
        if len(terms) < 1:
            raise ValueError("an LRA model needs rank >= 1")
        if b.size != len(terms):
            raise ValueError(f"{b.size} weights for {len(terms)} terms")
        fams = tuple(PolyFamily(f) for f in self.families)
        degs = terms[0].degrees
        if any(t.degrees != degs for t in terms):
            raise ValueError("all terms must share the per-dimension degrees")
        if len(fams) != len(degs):
            raise ValueError("one polynomial family per dimension is required")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "families", fams)

    @property
    def rank(self) -> int:
        return len(self.terms)

    @property
    def dim(self) -> int:
        return len(self.families)

    @property
    def degrees(self) -> tuple[int, ...]:
        return self.terms[0].degrees

    @property
    def n_unknowns(self) -> int:
        return self.rank * sum(p + 1 for p in self.degrees)

    def term_values(self, u) -> np.ndarray:
        """Values ``w_l(u)`` of every rank-one term, shape ``(n, R)``."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if u.shape[1] != self.dim:
            raise ValueError(f"model has {self.dim} inputs, points have {u.shape[1]}")
        w = np.ones((u.shape[0], self.rank))
        for i, (fam, p) in enumerate(zip(self.families, self.degrees)):
            table = univariate_table(fam, p, basic_variable(fam, u[:, i]))
            zmat = np.column_stack([t.z[i] for t in self.terms])
            w *= table @ zmat
        return w

    def predict(self, points, space: str = "standard") -> np.ndarray:
        return predict_lra(self, points, space)

    __call__ = predict

    def to_dict(self) -> dict:
        out = {
            "type": "lra",
            "families": [f.value for f in self.families],
            "degrees": list(self.degrees),
            "b": self.b.tolist(),
            "terms": [[z.tolist() for z in t.z] for t in self.terms],
        }
        if self.empirical_error is not None:
            out["empirical_error"] = self.empirical_error
        if self.input_model is not None:
            out["input_model"] = self.input_model.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> LraModel:
        if d.get("type", "lra") != "lra":
            raise ValueError(f"not an LRA document: type={d.get('type')!r}")
        im = d.get("input_model")
        return cls(
            terms=tuple(RankOneTerm(tuple(z)) for z in d["terms"]),
            b=np.asarray(d["b"], dtype=float),
            families=tuple(d["families"]),
            input_model=None if im is None else InputModel.from_dict(im),
            empirical_error=d.get("empirical_error"),
        )


def predict_lra(model: LraModel, points, space: str = "standard") -> np.ndarray:
    """Evaluate the LRA at ``points``.

    ``space='physical'`` routes the points through the model's input
    transform first; ``'standard'`` takes standard-normal coordinates.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != model.dim:
        raise ValueError(f"model has {model.dim} inputs, points have {pts.shape[1]}")
    if space == "physical":
        if model.input_model is None:
            raise ValueError("model carries no input model; pass standard-space points")
        pts = to_standard(pts, model.input_model)
    elif space != "standard":
        raise ValueError(f"unknown space {space!r}")
    out = np.empty(pts.shape[0])
    for s in range(0, pts.shape[0], PREDICT_CHUNK):
        out[s:s + PREDICT_CHUNK] = model.term_values(pts[s:s + PREDICT_CHUNK]) @ model.b
    return out


def _tables(u: np.ndarray, families, degrees) -> list[np.ndarray]:
    return [univariate_table(f, p, basic_variable(f, u[:, i]))
            for i, (f, p) in enumerate(zip(families, degrees))]


def _correction(tables: list[np.ndarray], residual: np.ndarray, scale: float,
                config: LraConfig) -> CorrectionResult:
    n = residual.size
    dim = len(tables)
    zs = [np.eye(t.shape[1])[0] for t in tables]  # v^(i) = 1
    v = np.ones((dim, n))
    d = residual - 1.0
    err = float(np.mean(d * d)) / scale
    history = [err]
    sweeps = 0
    decrease = math.inf
    while decrease > config.min_err_decrease and sweeps < config.max_sweeps:
        sweeps += 1
        for j in range(dim):
            frozen = np.prod(np.delete(v, j, axis=0), axis=0) if dim > 1 else np.ones(n)
            zs[j] = solve_ols(frozen[:, None] * tables[j], residual).coefficients
            v[j] = tables[j] @ zs[j]
        d = residual - np.prod(v, axis=0)
        new_err = float(np.mean(d * d)) / scale
        decrease = err - new_err
        err = new_err
        history.append(err)
    reason = "stalled" if decrease <= config.min_err_decrease else "max-sweeps"
    return CorrectionResult(RankOneTerm(tuple(zs)), sweeps, err, reason, history)


def _as_degrees(degrees, dim: int) -> tuple[int, ...]:
    if np.isscalar(degrees):
        return (int(degrees),) * dim
    degs = tuple(int(p) for p in degrees)
    if len(degs) != dim:
        raise ValueError(f"expected {dim} degrees, got {len(degs)}")
    return degs


def _as_families(families, dim: int) -> tuple[PolyFamily, ...]:
    if isinstance(families, (str, PolyFamily)):
        return (PolyFamily(families),) * dim
    fams = tuple(PolyFamily(f) for f in families)
    if len(fams) != dim:
        raise ValueError(f"expected {dim} families, got {len(fams)}")
    return fams


def correction_step(u, residual, families, degrees, config: LraConfig = LraConfig(),
                    response_variance: float | None = None) -> CorrectionResult:
    """Fit one rank-one term to ``residual`` at the design points ``u``.

    Each ``v^(i)`` starts at the constant 1 and dimensions are swept in
    ascending order. The loop stops after ``config.max_sweeps`` sweeps or
    once a sweep lowers the relative empirical error by no more than
    ``config.min_err_decrease``. Errors are normalized by
    ``response_variance`` (the variance of the original model responses;
    defaults to the variance of ``residual``).
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    residual = np.asarray(residual, dtype=float).ravel()
    if residual.size != u.shape[0] or residual.size == 0:
        raise ValueError("residual must align with a nonempty design")
    if response_variance is None:
        response_variance = empirical_variance(residual)
    if not response_variance > 0:
        raise ValueError("response variance is zero; relative error is undefined")
    tables = _tables(u, _as_families(families, u.shape[1]), _as_degrees(degrees, u.shape[1]))
    return _correction(tables, residual, float(response_variance), config)


def updating_step(y, term_values) -> np.ndarray:
    """Refit all weights ``b`` by least squares on the model responses."""
    w = np.asarray(term_values, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    return solve_ols(w, y).coefficients


def build_lra(ed: ExperimentalDesign, families, degrees, config: LraConfig = LraConfig(),
              input_model: InputModel | None = None) -> list[LraModel]:
    """Greedy construction of the LRA sequence of ranks ``1..config.r_max``.

    Returns one model per rank. ``model.empirical_error`` is the relative
    empirical error after the updating step; when the responses have zero
    variance, absolute errors are used and ``info['normalized']`` is False.
    """
    dim = ed.dim
    fams = _as_families(families, dim)
    degs = _as_degrees(degrees, dim)
    tables = _tables(ed.u, fams, degs)
    y = ed.y
    var = empirical_variance(y)
    normalized = bool(var > 0)
    scale = var if normalized else 1.0

    residual = y.copy()
    terms: list[RankOneTerm] = []
    w = np.empty((ed.size, 0))
    models = []
    corrections = []
    for _ in range(config.r_max):
        corr = _correction(tables, residual, scale, config)
        corrections.append({"sweeps": corr.sweeps, "error": corr.error, "reason": corr.reason})
        terms.append(corr.term)
        w_new = np.prod([t @ z for t, z in zip(tables, corr.term.z)], axis=0)
        w = np.column_stack([w, w_new])
        b = updating_step(y, w)
        fit = w @ b
        residual = y - fit
        emp = float(np.mean(residual * residual)) / scale
        models.append(LraModel(tuple(terms), b, fams, input_model, emp,
                               {"normalized": normalized, "corrections": list(corrections)}))
    return models


@dataclass
class CvReport:
    degrees: tuple[int, ...]
    table: np.ndarray  # (len(degrees), r_max) mean CV errors
    selected_rank: int
    selected_degree: int
    cv_error: float
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "degrees": list(self.degrees),
            "cv_errors": [[float(e) for e in row] for row in self.table],
            "selected_rank": self.selected_rank,
            "selected_degree": self.selected_degree,
            "cv_error": self.cv_error,
            "flags": list(self.flags),
        }


def select_lra(ed: ExperimentalDesign, families, config: LraConfig = LraConfig(),
               input_model: InputModel | None = None) -> tuple[LraModel, CvReport]:
    """Pick rank and common degree by k-fold cross-validation.

    For every degree in ``config.degrees`` the rank sequence is built on
    each training split and scored on the held-out fold for all ranks at
    once. The minimizer over (degree, rank), with ties going to the smaller
    degree and then the smaller rank, is rebuilt on the full design. Scores
    below ``config.min_err_decrease`` count as ties.
    """
    if ed.size < 2 * config.cv_folds:
        raise ValueError(f"need at least {2 * config.cv_folds} points for "
                         f"{config.cv_folds}-fold selection")
    fams = _as_families(families, ed.dim)

    def score(p):
        def trainer(u, y):
            return build_lra(ExperimentalDesign(u, y), fams, p, config)
        return kfold_cv(trainer, ed.u, ed.y, config.cv_folds, config.seed)

    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(score, config.degrees))
    else:
        results = [score(p) for p in config.degrees]
    table = np.vstack([r.errors for r in results])
    flags = sorted({f for r in results for f in r.flags})
    # the sweep stopping rule cannot resolve errors below min_err_decrease
    best = select_min(table.ravel(), floor=max(TIE_FLOOR, config.min_err_decrease))
    i_deg, i_rank = divmod(best, config.r_max)
    p, rank = config.degrees[i_deg], i_rank + 1
    final = build_lra(ed, fams, p, replace(config, r_max=rank), input_model)[-1]
    report = CvReport(config.degrees, table, rank, p, float(table[i_deg, i_rank]), flags)
    final.info["cv"] = report.to_dict()
    return final, report


def rescale_term(model: LraModel, index: int, factors: Sequence[float]) -> LraModel:
    """Scale the per-dimension coefficients of one term by ``factors`` and
    divide its weight by their product (same predictions)."""
    factors = np.asarray(factors, dtype=float)
    t = model.terms[index]
    new_term = RankOneTerm(tuple(z * c for z, c in zip(t.z, factors)))
    terms = list(model.terms)
    terms[index] = new_term
    b = model.b.copy()
    b[index] /= float(np.prod(factors))
    return replace(model, terms=tuple(terms), b=b, info=dict(model.info))
