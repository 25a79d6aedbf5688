"""Failure-probability estimation: Monte Carlo, FORM, SORM and importance
sampling around the design point.

All design-point machinery works in standard normal space. A limit state
``g`` defines failure as ``g <= 0``; for threshold problems ``g = t - y``.
"""

from __future__ import annotations

import csv
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import null_space

from .probcore import (SAMPLE_CHUNK, InputModel, NormalStream, norm_cdf, norm_ppf,
                       standard_normal_rows, to_physical)

FD_STEP = 1e-4
HESSIAN_STEP = 1e-3


class NonConvergenceError(RuntimeError):
    """Design-point search did not converge; carries the last iterate."""

    def __init__(self, message: str, last_iterate: np.ndarray, n_evals: int):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.n_evals = n_evals


class ZeroGradientError(ValueError):
    pass


class CurvatureError(ValueError):
    pass


def beta_from_pf(pf: float) -> float:
    """Generalized reliability index ``-Phi^{-1}(pf)``; ``+inf`` for pf = 0."""
    if pf <= 0:
        return math.inf
    if pf >= 1:
        return -math.inf
    return float(-norm_ppf(pf))


def pf_from_beta(beta: float) -> float:
    return float(norm_cdf(-beta))


class LimitState:
    """Limit-state function ``g``; failure is ``g <= 0``.

    ``evaluator`` maps an ``(n, M)`` array to ``n`` values. With an input
    model it receives physical points, otherwise standard-normal points.
    Every evaluated point is counted in ``n_evals`` (thread-safe).
    """

    def __init__(self, evaluator: Callable[[np.ndarray], np.ndarray],
                 input_model: InputModel | None = None, description: str = "",
                 dim: int | None = None):
        self.evaluator = evaluator
        self.input_model = input_model
        self.description = description
        if dim is None and input_model is None:
            raise ValueError("dimension required when no input model is given")
        self.dim = input_model.dim if input_model is not None else int(dim)
        self._count = 0
        self._lock = threading.Lock()

    @classmethod
    def threshold(cls, response: Callable[[np.ndarray], np.ndarray], limit: float,
                  input_model: InputModel | None = None, dim: int | None = None) -> LimitState:
        """``g = limit - response``: failure when the response reaches ``limit``."""
        return cls(lambda x: limit - np.asarray(response(x), dtype=float),
                   input_model, f"{limit!r} - response", dim)

    @property
    def n_evals(self) -> int:
        return self._count

    def __call__(self, u) -> np.ndarray:
        """Evaluate ``g`` at standard-normal points."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        x = u if self.input_model is None else to_physical(u, self.input_model)
        g = np.asarray(self.evaluator(x), dtype=float).ravel()
        if g.size != u.shape[0]:
            raise ValueError(f"limit state returned {g.size} values for {u.shape[0]} points")
        with self._lock:
            self._count += u.shape[0]
        return g


@dataclass
class ReliabilityResult:
    pf: float
    cov: float
    beta: float
    n_evals: int
    method: str
    design_point: np.ndarray | None = None
    flags: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.pf <= 1.0 or math.isnan(self.pf)):
            raise ValueError(f"probability out of range: {self.pf}")

    def to_dict(self) -> dict:
        def clean(v):
            return v if isinstance(v, (int, str)) or v is None or math.isfinite(v) else None
        return {
            "pf": clean(self.pf), "cov": clean(self.cov), "beta": clean(self.beta),
            "n_evals": self.n_evals, "method": self.method,
            "design_point": None if self.design_point is None else self.design_point.tolist(),
            "flags": list(self.flags),
        }


def _mcs_cov(pf: float, n: int) -> tuple[float, float]:
    if pf <= 0:
        return math.nan, math.nan
    return 1.0 / math.sqrt(n * pf), math.sqrt((1.0 - pf) / (n * pf))


def _mcs_result(failures: int, n: int, method: str = "mcs") -> ReliabilityResult:
    pf = failures / n
    cov, exact = _mcs_cov(pf, n)
    flags = ("no failures: cov undefined",) if failures == 0 else ()
    return ReliabilityResult(pf, cov, beta_from_pf(pf), n, method, None, flags,
                             {"cov_exact": exact, "failures": failures})


def _chunked(n: int, chunk: int):
    return [(s, min(s + chunk, n)) for s in range(0, n, chunk)]


def mcs_pf(ls: LimitState, n: int, seed=0, chunk: int = SAMPLE_CHUNK,
           threads: int = 1) -> ReliabilityResult:
    """Crude Monte Carlo estimate ``mean(g <= 0)`` on a streamed sample.

    The reported ``cov`` is ``1/sqrt(n pf)``; the exact binomial value is in
    ``extra['cov_exact']``.
    """
    if n < 1:
        raise ValueError("sample size must be >= 1")

    def count(span):
        u = standard_normal_rows(ls.dim, span[0], span[1], seed, chunk)
        return int(np.count_nonzero(ls(u) <= 0))

    spans = _chunked(n, chunk)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            failures = sum(pool.map(count, spans))
    else:
        failures = sum(count(s) for s in spans)
    return _mcs_result(failures, n)


def _gradient(ls: LimitState, u: np.ndarray) -> np.ndarray:
    h = FD_STEP * np.maximum(1.0, np.abs(u))
    pts = np.concatenate([u + np.diag(h), u - np.diag(h)])
    vals = ls(pts)
    m = u.size
    return (vals[:m] - vals[m:]) / (2 * h)


def form(ls: LimitState, start=None, tol: float = 1e-6, max_iter: int = 100,
         line_search: bool = True) -> ReliabilityResult:
    """Design-point search by the (improved) HL-RF iteration.

    Gradients are central finite differences in standard space. With
    ``line_search`` the HL-RF step is damped by halving until the merit
    function ``|u|^2/2 + c|g|`` decreases. Converged when the step
    (infinity norm) and ``|g|`` relative to ``|g(0)|`` are both within
    ``tol``. ``beta = |u*| sign(g(0))``.
    """
    n0 = ls.n_evals
    u = np.zeros(ls.dim) if start is None else np.asarray(start, dtype=float).copy()
    if u.size != ls.dim:
        raise ValueError(f"start point has {u.size} entries, expected {ls.dim}")
    g = float(ls(u)[0])
    g_origin = g if not np.any(u) else float(ls(np.zeros(ls.dim))[0])
    scale = abs(g_origin) if g_origin != 0 else 1.0
    for it in range(1, max_iter + 1):
        grad = _gradient(ls, u)
        gn2 = float(grad @ grad)
        if not gn2 > 0:
            raise ZeroGradientError(f"zero limit-state gradient at {u.tolist()}")
        target = (grad @ u - g) / gn2 * grad
        d = target - u
        step = 1.0
        if line_search:
            c = 2.0 * max(float(np.linalg.norm(u)), 1.0) / math.sqrt(gn2)
            merit = 0.5 * u @ u + c * abs(g)
            for _ in range(12):
                trial = u + step * d
                g_trial = float(ls(trial)[0])
                if 0.5 * trial @ trial + c * abs(g_trial) <= merit or step < 1e-3:
                    break
                step *= 0.5
        else:
            trial = target
            g_trial = float(ls(trial)[0])
        moved = float(np.max(np.abs(trial - u)))
        u, g = trial, g_trial
        if moved <= tol and abs(g) <= tol * scale:
            grad = _gradient(ls, u)
            break
    else:
        raise NonConvergenceError(f"FORM did not converge in {max_iter} iterations", u,
                                  ls.n_evals - n0)
    beta = float(np.linalg.norm(u)) * (1.0 if g_origin > 0 else -1.0)
    return ReliabilityResult(pf_from_beta(beta), math.nan, beta, ls.n_evals - n0, "form", u,
                             (), {"iterations": it, "gradient": grad, "g": g})


def _hessian(ls: LimitState, u: np.ndarray) -> np.ndarray:
    m = u.size
    h = HESSIAN_STEP * np.maximum(1.0, np.abs(u))
    eye = np.diag(h)
    pts = [u]
    pts += [u + eye[i] for i in range(m)] + [u - eye[i] for i in range(m)]
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    for i, j in pairs:
        pts += [u + eye[i] + eye[j], u + eye[i] - eye[j], u - eye[i] + eye[j], u - eye[i] - eye[j]]
    v = ls(np.array(pts))
    g0, plus, minus = v[0], v[1:m + 1], v[m + 1:2 * m + 1]
    hess = np.diag((plus - 2 * g0 + minus) / h**2)
    for k, (i, j) in enumerate(pairs):
        a, b, c, d = v[2 * m + 1 + 4 * k: 2 * m + 5 + 4 * k]
        hess[i, j] = hess[j, i] = (a - b - c + d) / (4 * h[i] * h[j])
    return hess


def sorm(ls: LimitState, form_result: ReliabilityResult) -> ReliabilityResult:
    """Breitung's second-order correction at the FORM design point.

    Curvatures are the eigenvalues of the finite-difference Hessian of
    ``g`` restricted to the tangent plane, divided by ``|grad g|``.
    """
    u = form_result.design_point
    beta = form_result.beta
    if u is None:
        raise ValueError("SORM needs a FORM result with a design point")
    if not beta > 0:
        raise ValueError("SORM needs beta > 0")
    n0 = ls.n_evals
    grad = form_result.extra.get("gradient")
    if grad is None:
        grad = _gradient(ls, u)
    gnorm = float(np.linalg.norm(grad))
    if u.size == 1:
        kappa = np.empty(0)
    else:
        tangent = null_space((grad / gnorm)[None, :])
        kappa = np.linalg.eigvalsh(tangent.T @ _hessian(ls, u) @ tangent) / gnorm
    factor = 1.0 + beta * kappa
    if np.any(factor <= 0):
        raise CurvatureError(f"second-order formula breaks down (1 + beta*kappa = {factor.min():.3g}); "
                             "use importance sampling instead")
    pf = pf_from_beta(beta) * float(np.prod(factor ** -0.5))
    return ReliabilityResult(pf, math.nan, beta_from_pf(pf),
                             form_result.n_evals + ls.n_evals - n0, "sorm", u, (),
                             {"curvatures": kappa, "beta_form": beta})


def importance_sampling(ls: LimitState, form_result: ReliabilityResult, batch: int = 100,
                        target_cov: float = 0.1, max_batches: int = 10_000,
                        seed=0) -> ReliabilityResult:
    """Importance sampling with a unit normal density centered at the
    design point, extended batch by batch until ``cov <= target_cov``.

    With the design point at the origin the weights are all one and the
    sample is the crude Monte Carlo stream of the same seed. ``n_evals``
    includes the evaluations spent by the FORM search.
    """
    center = form_result.design_point
    center = np.zeros(ls.dim) if center is None else np.asarray(center, dtype=float)
    shift = 0.5 * float(center @ center)
    s1 = s2 = 0.0
    n = 0
    pf = cov = math.nan
    flags = []
    stream = NormalStream(ls.dim, seed)
    for k in range(max_batches):
        z = stream.rows(k * batch, (k + 1) * batch)
        u = z + center
        fail = ls(u) <= 0
        w = np.where(fail, np.exp(shift - u @ center), 0.0)
        s1 += float(w.sum())
        s2 += float(w @ w)
        n += batch
        pf = s1 / n
        if pf > 0 and n > 1:
            var = max(s2 - s1 * s1 / n, 0.0) / (n - 1)
            cov = math.sqrt(var / n) / pf
            if cov <= target_cov:
                break
    else:
        flags.append(f"target cov {target_cov} not reached after {max_batches} batches")
    if pf == 0:
        flags.append("no failures: zero estimate")
        cov = math.nan
    return ReliabilityResult(min(pf, 1.0), cov, beta_from_pf(pf), n + form_result.n_evals,
                             "is", center, tuple(flags), {"n_samples": n})


@dataclass
class PfCurve:
    thresholds: list[float]
    results: list[ReliabilityResult]
    errors: list[str | None]

    def rows(self) -> list[dict]:
        out = []
        for t, r in zip(self.thresholds, self.results):
            d = r.to_dict()
            out.append({"threshold": t, "pf": d["pf"], "cov": d["cov"], "beta": d["beta"],
                        "n_evals": r.n_evals, "method": r.method})
        return out

    def to_csv(self, path) -> None:
        cols = ["threshold", "pf", "cov", "beta", "n_evals", "method"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in self.rows():
                w.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float)
                                                       else row[c]) for c in cols])


def _failed(method: str, exc: Exception) -> ReliabilityResult:
    return ReliabilityResult(math.nan, math.nan, math.nan, 0, method, None, (f"error: {exc}",))


def pf_curve(response: Callable[[np.ndarray], np.ndarray], thresholds: Sequence[float],
             method: str = "mcs", input_model: InputModel | None = None,
             dim: int | None = None, n: int = 10**6, seed=0,
             chunk: int = SAMPLE_CHUNK, threads: int = 1, batch: int = 100,
             target_cov: float = 0.1, max_batches: int = 10_000,
             analytical: Callable[[float], float] | None = None) -> PfCurve:
    """Exceedance probabilities ``P(response >= t)`` for sorted thresholds.

    ``mcs`` reuses one sample for every threshold. ``form``, ``sorm`` and
    ``is`` run a FORM search per threshold, warm-started from the previous
    design point. ``analytical`` evaluates a closed-form ``pf(t)``. A
    failure at one threshold is recorded in ``errors`` and the curve goes on.
    """
    ts = [float(t) for t in thresholds]
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("thresholds must be sorted")
    if not ts:
        return PfCurve([], [], [])
    if dim is None:
        if input_model is None:
            raise ValueError("dimension required when no input model is given")
        dim = input_model.dim

    if method == "analytical":
        if analytical is None:
            raise ValueError("analytical method needs a pf function")
        res = []
        for t in ts:
            pf = float(analytical(t))
            res.append(ReliabilityResult(pf, 0.0, beta_from_pf(pf), 0, "analytical"))
        return PfCurve(ts, res, [None] * len(ts))

    if method == "mcs":
        tarr = np.array(ts)

        def count(span):
            u = standard_normal_rows(dim, span[0], span[1], seed, chunk)
            x = u if input_model is None else to_physical(u, input_model)
            y = np.asarray(response(x), dtype=float).ravel()
            # failure g = t - y <= 0; sorted y makes this one search per chunk
            return y.size - np.searchsorted(np.sort(y), tarr, side="left")

        spans = _chunked(n, chunk)
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                counts = sum(pool.map(count, spans))
        else:
            counts = sum(count(s) for s in spans)
        return PfCurve(ts, [_mcs_result(int(c), n) for c in counts], [None] * len(ts))

    if method not in ("form", "sorm", "is"):
        raise ValueError(f"unknown reliability method {method!r}")
    results, errors = [], []
    start = None
    for t in ts:
        ls = LimitState.threshold(response, t, input_model, dim)
        try:
            fr = form(ls, start)
            start = fr.design_point
            if method == "form":
                r = fr
            elif method == "sorm":
                r = sorm(ls, fr)
            else:
                r = importance_sampling(ls, fr, batch, target_cov, max_batches, seed)
            results.append(r)
            errors.append(None)
        except Exception as exc:  # noqa: BLE001 - per-threshold failure is part of the curve
            results.append(_failed(method, exc))
            errors.append(str(exc))
    return PfCurve(ts, results, errors)

