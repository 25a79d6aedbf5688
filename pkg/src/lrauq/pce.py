"""Sparse polynomial chaos expansions.

Candidate bases come from hyperbolic (q-norm) truncation. Predictors are
ranked by least angle regression, every prefix of the LAR path is refit by
ordinary least squares, and the prefix with the smallest corrected
leave-one-out error is kept (hybrid LAR).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .lsq import RANK_RTOL, solve_ols
from .metrics import TIE_FLOOR, empirical_variance, select_min
from .polybasis import PolyFamily, basic_variable, design_matrix
from .probcore import ExperimentalDesign, InputModel, to_standard

PREDICT_CHUNK = 50_000


class BasisTooLargeError(ValueError):
    pass


def hyperbolic_index_set(dim: int, pt: int, q: float = 1.0,
                         max_size: int = 200_000) -> list[tuple[int, ...]]:
    """Multi-indices with q-norm at most ``pt``, in lexicographic order."""
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    if pt < 0:
        raise ValueError("total degree must be >= 0")
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    budget = (pt + 1e-10) ** q
    powers = [k**q for k in range(pt + 1)]
    out: list[tuple[int, ...]] = []
    prefix = [0] * dim

    def rec(i: int, left: float):
        if i == dim:
            out.append(tuple(prefix))
            if len(out) > max_size:
                raise BasisTooLargeError(
                    f"truncation (M={dim}, pt={pt}, q={q}) exceeds {max_size} terms; "
                    "lower pt or q")
            return
        for k in range(pt + 1):
            if powers[k] > left:
                break
            prefix[i] = k
            rec(i + 1, left - powers[k])
        prefix[i] = 0

    rec(0, budget)
    out.sort()
    return out


@dataclass(frozen=True)
class LooResult:
    loo: float
    loo_corrected: float
    relative: float
    relative_corrected: float
    flags: tuple[str, ...] = ()


def loo_error(a, y, coefficients=None) -> LooResult:
    """Closed-form leave-one-out error of an OLS fit and its corrected form.

    The correction multiplies by ``N/(N-P) * (1 + tr((A^T A / N)^-1) / N)``.
    Points with unit leverage cannot be left out and are excluded (flagged).
    Rank-deficient designs fall back to explicit refits with the correction
    factor omitted.
    """
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, p = a.shape
    sol = solve_ols(a, y, want_leverage=True)
    c = sol.coefficients if coefficients is None else np.asarray(coefficients, dtype=float)
    var = empirical_variance(y)
    scale = var if var > 0 else math.nan
    flags = []
    if not sol.full_rank:
        flags.append("rank-deficient: explicit leave-one-out refits, no correction")
        resid = np.empty(n)
        for i in range(n):
            keep = np.arange(n) != i
            ci = solve_ols(a[keep], y[keep]).coefficients
            resid[i] = y[i] - a[i] @ ci
        loo = float(np.mean(resid**2))
        return LooResult(loo, loo, loo / scale, loo / scale, tuple(flags))
    resid = y - a @ c
    h = sol.hat_diagonal
    ok = h < 1.0 - 1e-10
    if not np.all(ok):
        flags.append(f"interpolatory: {int(np.sum(~ok))} point(s) with unit leverage excluded")
    if not np.any(ok):
        return LooResult(math.inf, math.inf, math.inf, math.inf, tuple(flags))
    loo = float(np.mean((resid[ok] / (1.0 - h[ok])) ** 2))
    if n > p:
        s = sol.singular_values
        t = n / (n - p) * (1.0 + float(np.sum(1.0 / s**2)))
    else:
        t = math.inf
        flags.append("N <= P: correction factor undefined")
    corrected = loo * t
    return LooResult(loo, corrected, loo / scale, corrected / scale, tuple(flags))


@dataclass(frozen=True)
class PceConfig:
    pt_grid: tuple[int, ...] = (1, 2, 3, 4, 5)
    q_grid: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    max_basis_size: int = 20_000
    threads: int = 1

    def __post_init__(self):
        if not self.pt_grid or not self.q_grid:
            raise ValueError("PCE grids must be nonempty")
        if any(not 0 < q <= 1 for q in self.q_grid):
            raise ValueError("q values must lie in (0, 1]")
        object.__setattr__(self, "pt_grid", tuple(int(p) for p in self.pt_grid))
        object.__setattr__(self, "q_grid", tuple(float(q) for q in self.q_grid))


@dataclass(frozen=True)
class PceModel:
    indices: np.ndarray  # (K, M) integer multi-indices
    coefficients: np.ndarray
    families: tuple[PolyFamily, ...]
    input_model: InputModel | None = None
    loo: float | None = None
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=int)
        fams = tuple(PolyFamily(f) for f in self.families)
        if idx.ndim != 2 or idx.shape[1] != len(fams):
            idx = idx.reshape(-1, len(fams))
        coef = np.asarray(self.coefficients, dtype=float).ravel()
        if coef.size != idx.shape[0]:
            raise ValueError(f"{coef.size} coefficients for {idx.shape[0]} multi-indices")
        if len({tuple(r) for r in idx}) != idx.shape[0]:
            raise ValueError("multi-indices must be unique")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "families", fams)

    @property
    def dim(self) -> int:
        return len(self.families)

    @property
    def size(self) -> int:
        return self.coefficients.size

    def predict(self, points, space: str = "standard") -> np.ndarray:
        return predict_pce(self, points, space)

    __call__ = predict

    def mean(self) -> float:
        zero = np.all(self.indices == 0, axis=1)
        return float(self.coefficients[zero].sum())

    def variance(self) -> float:
        zero = np.all(self.indices == 0, axis=1)
        return float(np.sum(self.coefficients[~zero] ** 2))

    def to_dict(self) -> dict:
        out = {
            "type": "pce",
            "families": [f.value for f in self.families],
            "indices": self.indices.tolist(),
            "coefficients": self.coefficients.tolist(),
            "loo": self.loo,
        }
        for key in ("pt", "q", "loo_plain", "flags"):
            if key in self.info:
                out[key] = self.info[key]
        if self.input_model is not None:
            out["input_model"] = self.input_model.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> PceModel:
        if d.get("type", "pce") != "pce":
            raise ValueError(f"not a PCE document: type={d.get('type')!r}")
        im = d.get("input_model")
        info = {k: d[k] for k in ("pt", "q", "loo_plain", "flags") if k in d}
        return cls(np.asarray(d["indices"], dtype=int), np.asarray(d["coefficients"]),
                   tuple(d["families"]), None if im is None else InputModel.from_dict(im),
                   d.get("loo"), info)


def _families(families, dim):
    if isinstance(families, (str, PolyFamily)):
        return (PolyFamily(families),) * dim
    fams = tuple(PolyFamily(f) for f in families)
    if len(fams) != dim:
        raise ValueError(f"expected {dim} families, got {len(fams)}")
    return fams


def _basic(u, fams):
    return np.column_stack([basic_variable(f, u[:, i]) for i, f in enumerate(fams)])


def predict_pce(model: PceModel, points, space: str = "standard") -> np.ndarray:
    """Evaluate the expansion at ``points`` (standard or physical space)."""
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
        chunk = _basic(pts[s:s + PREDICT_CHUNK], model.families)
        out[s:s + PREDICT_CHUNK] = design_matrix(model.families, model.indices, chunk) @ model.coefficients
    return out


def fit_pce_ols(ed: ExperimentalDesign, indices, families,
                input_model: InputModel | None = None) -> PceModel:
    """Least-squares PCE on a fixed basis, with its corrected LOO error."""
    fams = _families(families, ed.dim)
    idx = np.asarray(indices, dtype=int).reshape(-1, ed.dim)
    a = design_matrix(fams, idx, _basic(ed.u, fams))
    sol = solve_ols(a, ed.y)
    res = loo_error(a, ed.y, sol.coefficients)
    flags = list(res.flags)
    if not sol.full_rank:
        flags.append(f"rank-deficient fit (rank {sol.effective_rank} < {idx.shape[0]})")
    info = {"loo_plain": res.relative, "flags": flags}
    return PceModel(idx, sol.coefficients, fams, input_model, res.relative_corrected, info)


def lar_order(a, y, intercept_column: int | None = None, rtol: float = RANK_RTOL) -> list[int]:
    """Order in which least angle regression activates the columns of ``a``.

    The intercept column (if any) is kept out of the path: responses and
    the other regressors are centered, and regressors are scaled to unit
    norm. Correlation ties go to the lowest column index. The path stops
    when all usable columns are active, after ``N-1`` steps, or when the
    active set becomes collinear.
    """
    a = np.asarray(a, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, p = a.shape
    cols = np.array([j for j in range(p) if j != intercept_column], dtype=int)
    x = a[:, cols]
    r = y.copy()
    if intercept_column is not None:
        x = x - x.mean(axis=0)
        r = r - r.mean()
    norms = np.linalg.norm(x, axis=0)
    usable = norms > rtol * max(float(norms.max(initial=0.0)), 1.0)
    x = x[:, usable] / norms[usable]
    cols = cols[usable]
    k_max = min(x.shape[1], n - 1 if intercept_column is not None else n)
    active: list[int] = []
    inactive = np.ones(x.shape[1], dtype=bool)
    eps = np.finfo(float).eps
    ynorm = max(float(np.linalg.norm(r)), eps)
    while len(active) < k_max:
        c = x.T @ r
        cmax = float(np.max(np.abs(c[inactive])))
        if cmax <= 1e-13 * ynorm:
            break
        j = int(np.flatnonzero(inactive & (np.abs(c) >= cmax * (1 - 1e-12)))[0])
        trial = active + [j]
        signs = np.sign(c[trial])
        signs[signs == 0] = 1.0
        xa = x[:, trial] * signs
        gram = xa.T @ xa
        ev = np.linalg.eigvalsh(gram)
        if ev[0] <= 1e-10 * ev[-1]:
            break
        active = trial
        inactive[j] = False
        g1 = np.linalg.solve(gram, np.ones(len(active)))
        big_a = 1.0 / math.sqrt(float(np.sum(g1)))
        direction = xa @ (big_a * g1)
        corr = float(np.max(np.abs(c[active])))
        if not np.any(inactive):
            gamma = corr / big_a
        else:
            aj = x.T @ direction
            with np.errstate(divide="ignore", invalid="ignore"):
                g_minus = (corr - c) / (big_a - aj)
                g_plus = (corr + c) / (big_a + aj)
            cand = np.concatenate([g_minus[inactive], g_plus[inactive]])
            cand = cand[np.isfinite(cand) & (cand > eps)]
            gamma = float(cand.min()) if cand.size else corr / big_a
            gamma = min(gamma, corr / big_a)
        r = r - gamma * direction
    return [int(cols[j]) for j in active]


def hybrid_lar(ed: ExperimentalDesign, indices, families,
               input_model: InputModel | None = None) -> PceModel:
    """Sparse PCE by hybrid LAR.

    Every prefix of the LAR ordering (plus the intercept) is refit by OLS
    and scored with the relative corrected LOO error; the best prefix wins,
    ties going to the shorter one. ``info['path']`` records the scores.
    """
    fams = _families(families, ed.dim)
    idx = np.asarray(indices, dtype=int).reshape(-1, ed.dim)
    if ed.size < 3:
        raise ValueError("hybrid LAR needs at least 3 design points")
    a = design_matrix(fams, idx, _basic(ed.u, fams))
    zero = np.flatnonzero(np.all(idx == 0, axis=1))
    icol = int(zero[0]) if zero.size else None
    base = [] if icol is None else [icol]
    y = ed.y
    if not empirical_variance(y) > 0:
        cols = base or [0]
        sol = solve_ols(a[:, cols], y)
        return PceModel(idx[cols], sol.coefficients, fams, input_model, 0.0,
                        {"flags": ["constant responses: intercept-only model"], "path": []})

    order = lar_order(a, y, icol)
    limit = ed.size - 1  # keep N > P so the LOO correction is defined
    prefixes = [base + order[:k] for k in range(0 if base else 1, len(order) + 1)]
    prefixes = [c for c in prefixes if 0 < len(c) <= limit]
    path = []
    fits = []
    for cols in prefixes:
        sol = solve_ols(a[:, cols], y)
        if not sol.full_rank:
            break
        res = loo_error(a[:, cols], y, sol.coefficients)
        path.append({"size": len(cols), "loo": res.relative_corrected, "loo_plain": res.relative})
        fits.append((cols, sol, res))
    if not fits:
        raise ValueError("hybrid LAR produced no admissible model")
    best = select_min([f[2].relative_corrected for f in fits], floor=TIE_FLOOR)
    cols, sol, res = fits[best]
    info = {"path": path, "order": [idx[j].tolist() for j in order],
            "loo_plain": res.relative, "flags": list(res.flags)}
    return PceModel(idx[cols], sol.coefficients, fams, input_model, res.relative_corrected, info)


@dataclass
class PceReport:
    table: list[dict]
    selected: dict

    def to_dict(self) -> dict:
        return {"table": self.table, "selected": self.selected}


def select_pce(ed: ExperimentalDesign, families, config: PceConfig = PceConfig(),
               input_model: InputModel | None = None) -> tuple[PceModel, PceReport]:
    """Hybrid-LAR PCE for every ``(pt, q)`` pair; keep the corrected-LOO
    minimizer. Ties prefer the smaller truncation set, then smaller ``pt``."""
    fams = _families(families, ed.dim)
    pairs = [(pt, q) for pt in config.pt_grid for q in config.q_grid]

    def run(pair):
        pt, q = pair
        try:
            cand = hyperbolic_index_set(ed.dim, pt, q, config.max_basis_size)
            model = hybrid_lar(ed, cand, fams, input_model)
            return {"pt": pt, "q": q, "card": len(cand), "loo": model.loo,
                    "size": model.size}, model
        except Exception as exc:  # noqa: BLE001 - recorded per grid cell
            return {"pt": pt, "q": q, "error": str(exc)}, None

    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            results = list(pool.map(run, pairs))
    else:
        results = [run(p) for p in pairs]
    ok = [(row, m) for row, m in results if m is not None]
    if not ok:
        causes = "; ".join(f"(pt={r['pt']}, q={r['q']}): {r['error']}" for r, _ in results)
        raise RuntimeError(f"every (pt, q) pair failed: {causes}")
    ok.sort(key=lambda rm: (rm[0]["card"], rm[0]["pt"]))
    best = select_min([row["loo"] for row, _ in ok])
    row, model = ok[best]
    model.info.update({"pt": row["pt"], "q": row["q"]})
    return model, PceReport([r for r, _ in results], dict(row))
