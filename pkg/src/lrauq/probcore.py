"""Probabilistic input modeling.

Marginal distributions, the Gaussian-copula input model and the
isoprobabilistic transforms between physical space and independent
standard-normal space. Also hosts the samplers (Sobol, seeded Monte Carlo)
and the experimental-design container used to train surrogates.
"""

from __future__ import annotations

import csv
import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

EULER_GAMMA = 0.57721566490153286061
DEFAULT_CLIP = 8.2
SAMPLE_CHUNK = 65536


class DomainError(ValueError):
    """Raised when a value lies outside the support of a distribution."""


class MarginalKind(str, enum.Enum):
    LOGNORMAL = "lognormal"
    GUMBEL = "gumbel"
    TRUNCATED_GAUSSIAN = "truncated_gaussian"
    UNIFORM = "uniform"
    GAUSSIAN = "gaussian"


def norm_cdf(x):
    return ndtr(x)


def norm_ppf(p):
    return ndtri(p)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def _normal_mass(lo, delta):
    """``Phi(lo + delta) - Phi(lo)`` for ``delta >= 0`` without cancellation.

    Short intervals are integrated with Gauss-Legendre quadrature so the
    result keeps full relative precision as ``delta`` goes to zero.
    """
    delta = np.asarray(delta, dtype=float)
    short = delta <= 1.0
    d = np.where(short, delta, 0.0)
    s = lo + 0.5 * d[..., None] * (1.0 + _GL_NODES)
    quad = 0.5 * d * (np.exp(-0.5 * s * s) @ _GL_WEIGHTS) / math.sqrt(2 * math.pi)
    with np.errstate(invalid="ignore"):
        if lo > 0:
            diff = ndtr(-lo) - ndtr(-(lo + delta))
        else:
            diff = ndtr(lo + delta) - ndtr(lo)
    return np.where(short, quad, diff)


def _z_from_tails(p, q):
    # Pick the numerically small tail to keep precision far from the median.
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(p < 0.5, ndtri(p), -ndtri(q))


@dataclass(frozen=True)
class Marginal:
    """A univariate marginal distribution.

    Parameters are distribution-native:

    * lognormal: ``(lam, zeta)``, mean and std of ``log X``
    * gumbel (maxima): ``(location, scale)``
    * truncated_gaussian: ``(mu, sigma)`` of the underlying untruncated
      Gaussian, truncated to ``[0, inf)``
    * uniform: ``(lower, upper)``
    * gaussian: ``(mu, sigma)``

    ``moments`` keeps the ``(mean, std)`` pair the parameters were derived
    from, when built with one of the moment-based constructors.
    """

    kind: MarginalKind
    params: tuple[float, ...]
    moments: tuple[float, float] | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", MarginalKind(self.kind))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        a, b = self.params
        if not (math.isfinite(a) and math.isfinite(b)):
            raise ValueError(f"non-finite parameters for {self.kind.value}: {self.params}")
        if self.kind is MarginalKind.UNIFORM:
            if not b > a:
                raise ValueError("uniform requires lower < upper")
        elif b <= 0:
            raise ValueError(f"{self.kind.value} requires a positive scale parameter")

    # -- constructors -----------------------------------------------------
    @classmethod
    def lognormal(cls, mean: float, cov: float, name: str = "") -> Marginal:
        if mean <= 0 or cov <= 0:
            raise ValueError("lognormal requires mean > 0 and CoV > 0")
        zeta2 = math.log1p(cov * cov)
        lam = math.log(mean) - 0.5 * zeta2
        return cls(MarginalKind.LOGNORMAL, (lam, math.sqrt(zeta2)), (mean, mean * cov), name)

    @classmethod
    def gumbel(cls, mean: float, std: float, name: str = "") -> Marginal:
        if std <= 0:
            raise ValueError("gumbel requires std > 0")
        scale = std * math.sqrt(6.0) / math.pi
        loc = mean - EULER_GAMMA * scale
        return cls(MarginalKind.GUMBEL, (loc, scale), (mean, std), name)

    @classmethod
    def truncated_gaussian(cls, mean: float, std: float, name: str = "") -> Marginal:
        # mean/std are those of the parent Gaussian before truncation at 0
        return cls(MarginalKind.TRUNCATED_GAUSSIAN, (mean, std), (mean, std), name)

    @classmethod
    def uniform(cls, lower: float, upper: float, name: str = "") -> Marginal:
        mean = 0.5 * (lower + upper)
        std = (upper - lower) / math.sqrt(12.0)
        return cls(MarginalKind.UNIFORM, (lower, upper), (mean, std), name)

    @classmethod
    def gaussian(cls, mean: float, std: float, name: str = "") -> Marginal:
        return cls(MarginalKind.GAUSSIAN, (mean, std), (mean, std), name)

    @classmethod
    def from_dict(cls, spec: dict) -> Marginal:
        """Build a marginal from a config mapping.

        Accepts either native ``params`` or moments (``mean`` with ``cov`` or
        ``std``); uniform takes ``lower``/``upper``.
        """
        kind = MarginalKind(spec["kind"])
        name = spec.get("name", "")
        if "params" in spec:
            return cls(kind, tuple(spec["params"]), None, name)
        if kind is MarginalKind.UNIFORM:
            return cls.uniform(spec["lower"], spec["upper"], name)
        mean = float(spec["mean"])
        if "std" in spec:
            std = float(spec["std"])
        elif "cov" in spec:
            std = abs(mean) * float(spec["cov"])
        else:
            raise ValueError(f"marginal {name!r}: give 'std' or 'cov' with 'mean'")
        if kind is MarginalKind.LOGNORMAL:
            return cls.lognormal(mean, std / mean, name)
        if kind is MarginalKind.GUMBEL:
            return cls.gumbel(mean, std, name)
        if kind is MarginalKind.TRUNCATED_GAUSSIAN:
            return cls.truncated_gaussian(mean, std, name)
        return cls.gaussian(mean, std, name)

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "params": list(self.params)}
        if self.name:
            out["name"] = self.name
        return out

    # -- distribution functions -------------------------------------------
    @property
    def support(self) -> tuple[float, float]:
        if self.kind is MarginalKind.LOGNORMAL or self.kind is MarginalKind.TRUNCATED_GAUSSIAN:
            return (0.0, math.inf)
        if self.kind is MarginalKind.UNIFORM:
            return self.params
        return (-math.inf, math.inf)

    def _tails(self, x):
        """Return ``(F(x), 1 - F(x))`` each computed without cancellation."""
        x = np.asarray(x, dtype=float)
        a, b = self.params
        kind = self.kind
        if kind is MarginalKind.GAUSSIAN:
            t = (x - a) / b
            return ndtr(t), ndtr(-t)
        if kind is MarginalKind.LOGNORMAL:
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.where(x > 0, (np.log(np.where(x > 0, x, 1.0)) - a) / b, -np.inf)
            return ndtr(t), ndtr(-t)
        if kind is MarginalKind.GUMBEL:
            e = np.exp(-(x - a) / b)
            return np.exp(-e), -np.expm1(-e)
        if kind is MarginalKind.UNIFORM:
            p = np.clip((x - a) / (b - a), 0.0, 1.0)
            q = np.clip((b - x) / (b - a), 0.0, 1.0)
            return p, q
        # truncated Gaussian on [0, inf)
        # offsets from the zero bound are taken from x directly: x = b * (t - lo)
        lo = -a / b
        mass = ndtr(-lo)
        delta = np.maximum(x, 0.0) / b
        return _normal_mass(lo, delta) / mass, ndtr(-(lo + delta)) / mass

    def cdf(self, x):
        return self._tails(x)[0]

    def sf(self, x):
        return self._tails(x)[1]

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.params
        kind = self.kind
        phi = lambda t: np.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)  # noqa: E731
        if kind is MarginalKind.GAUSSIAN:
            return phi((x - a) / b) / b
        if kind is MarginalKind.LOGNORMAL:
            xs = np.where(x > 0, x, 1.0)
            return np.where(x > 0, phi((np.log(xs) - a) / b) / (b * xs), 0.0)
        if kind is MarginalKind.GUMBEL:
            t = (x - a) / b
            return np.exp(-t - np.exp(-t)) / b
        if kind is MarginalKind.UNIFORM:
            return np.where((x >= a) & (x <= b), 1.0 / (b - a), 0.0)
        mass = ndtr(a / b)
        return np.where(x >= 0, phi((x - a) / b) / (b * mass), 0.0)

    def ppf(self, p):
        p = np.asarray(p, dtype=float)
        return self.from_normal(ndtri(p))

    def mean(self) -> float:
        a, b = self.params
        kind = self.kind
        if kind is MarginalKind.LOGNORMAL:
            return math.exp(a + 0.5 * b * b)
        if kind is MarginalKind.GUMBEL:
            return a + EULER_GAMMA * b
        if kind is MarginalKind.UNIFORM:
            return 0.5 * (a + b)
        if kind is MarginalKind.TRUNCATED_GAUSSIAN:
            lo = -a / b
            return a + b * math.exp(-0.5 * lo * lo) / math.sqrt(2 * math.pi) / float(ndtr(-lo))
        return a

    def std(self) -> float:
        a, b = self.params
        kind = self.kind
        if kind is MarginalKind.LOGNORMAL:
            return math.sqrt(math.expm1(b * b)) * math.exp(a + 0.5 * b * b)
        if kind is MarginalKind.GUMBEL:
            return b * math.pi / math.sqrt(6.0)
        if kind is MarginalKind.UNIFORM:
            return (b - a) / math.sqrt(12.0)
        if kind is MarginalKind.TRUNCATED_GAUSSIAN:
            lo = -a / b
            lam = math.exp(-0.5 * lo * lo) / math.sqrt(2 * math.pi) / float(ndtr(-lo))
            return b * math.sqrt(1.0 + lo * lam - lam * lam)
        return b

    # -- standard-normal maps ---------------------------------------------
    def from_normal(self, z):
        """Map standard-normal values ``z`` to this marginal, ``F^-1(Phi(z))``."""
        z = np.asarray(z, dtype=float)
        a, b = self.params
        kind = self.kind
        if kind is MarginalKind.GAUSSIAN:
            return a + b * z
        if kind is MarginalKind.LOGNORMAL:
            return np.exp(a + b * z)
        neg = z <= 0
        p = ndtr(np.where(neg, z, -z))  # the small tail probability
        if kind is MarginalKind.GUMBEL:
            with np.errstate(divide="ignore"):
                t = np.where(neg, -np.log(-np.log(p)), -np.log(-np.log1p(-p)))
            return a + b * t
        if kind is MarginalKind.UNIFORM:
            return np.where(neg, a + (b - a) * p, b - (b - a) * p)
        lo = -a / b
        mass = ndtr(-lo)
        upper = a - b * ndtri(p * mass)
        # lower half: solve for the offset from the bound, Newton on the stable mass
        target = p * mass
        with np.errstate(invalid="ignore"):
            delta = np.maximum(ndtri(np.minimum(ndtr(lo) + target, 1.0)) - lo, 0.0)
        delta = np.where(neg & np.isfinite(delta), delta, 0.0)
        for _ in range(4):
            s = lo + delta
            dens = np.exp(-0.5 * s * s) / math.sqrt(2 * math.pi)
            step = (_normal_mass(lo, delta) - target) / np.where(dens > 0, dens, 1.0)
            delta = np.maximum(delta - np.where(neg, step, 0.0), 0.0)
        return np.where(neg, b * delta, upper)

    def to_normal(self, x, clip: float = DEFAULT_CLIP, coordinate: int | None = None):
        """Map physical values to standard normal, ``Phi^-1(F(x))``.

        Returns ``(z, clipped)``; values at the edge of the support map to
        ``-inf``/``+inf`` and are saturated at ``+-clip`` with the flag set.
        """
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        bad = np.isnan(x) | (x < lo) | (x > hi)
        if np.any(bad):
            where = f" (coordinate {coordinate})" if coordinate is not None else ""
            val = x[bad].flat[0] if x.ndim else float(x)
            raise DomainError(
                f"value {val!r} outside support [{lo}, {hi}] of {self.kind.value}{where}"
            )
        a, b = self.params
        if self.kind is MarginalKind.GAUSSIAN:
            z = (x - a) / b
        elif self.kind is MarginalKind.LOGNORMAL:
            with np.errstate(divide="ignore"):
                z = (np.log(x) - a) / b
        else:
            z = _z_from_tails(*self._tails(x))
        clipped = ~np.isfinite(z) | (np.abs(z) > clip)
        z = np.clip(np.nan_to_num(z, posinf=clip, neginf=-clip), -clip, clip)
        return z, clipped


@dataclass
class InputModel:
    """Joint input distribution: marginals tied by a Gaussian copula.

    ``correlation`` is interpreted in standard-normal (copula) space; the
    Nataf correction to physical-space correlations is not applied.
    """

    marginals: list[Marginal]
    correlation: np.ndarray | None = None
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.marginals = list(self.marginals)
        m = len(self.marginals)
        if m < 1:
            raise ValueError("an input model needs at least one marginal")
        if self.correlation is None:
            self.correlation = np.eye(m)
        r = np.asarray(self.correlation, dtype=float)
        if r.shape != (m, m):
            raise ValueError(f"correlation must be {m}x{m}, got {r.shape}")
        if not np.allclose(r, r.T, atol=1e-12, rtol=0):
            raise ValueError("correlation matrix is not symmetric")
        if not np.allclose(np.diag(r), 1.0, atol=1e-12, rtol=0):
            raise ValueError("correlation matrix must have a unit diagonal")
        try:
            self._chol = np.linalg.cholesky(r)
        except np.linalg.LinAlgError as exc:
            raise ValueError("correlation matrix is not positive definite") from exc
        self.correlation = r

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @property
    def independent(self) -> bool:
        return bool(np.array_equal(self.correlation, np.eye(self.dim)))

    @property
    def cholesky(self) -> np.ndarray:
        return self._chol

    @property
    def names(self) -> list[str]:
        return [m.name or f"x{i + 1}" for i, m in enumerate(self.marginals)]

    @classmethod
    def independent_normal(cls, dim: int) -> InputModel:
        return cls([Marginal.gaussian(0.0, 1.0, f"xi{i + 1}") for i in range(dim)])

    @classmethod
    def from_dict(cls, spec: dict) -> InputModel:
        marginals = [Marginal.from_dict(m) for m in spec["marginals"]]
        corr = spec.get("correlation")
        if corr is not None and isinstance(corr, dict):
            # sparse form: {"pairs": [[i, j, rho], ...]} with 0-based indices
            corr = correlation_from_pairs(len(marginals), corr.get("pairs", []))
        return cls(marginals, None if corr is None else np.asarray(corr, dtype=float))

    def to_dict(self) -> dict:
        out = {"marginals": [m.to_dict() for m in self.marginals]}
        if not self.independent:
            out["correlation"] = self.correlation.tolist()
        return out

    def to_physical(self, u, clip: float = DEFAULT_CLIP, return_flags: bool = False):
        return to_physical(u, self, clip=clip, return_flags=return_flags)

    def to_standard(self, x, clip: float = DEFAULT_CLIP, return_flags: bool = False):
        return to_standard(x, self, clip=clip, return_flags=return_flags)


def _as_rows(a, dim: int) -> tuple[np.ndarray, bool]:
    a = np.asarray(a, dtype=float)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if a.shape[1] != dim:
        raise ValueError(f"expected {dim} coordinates per point, got {a.shape[1]}")
    return a, single


def to_physical(u, model: InputModel, clip: float = DEFAULT_CLIP, return_flags: bool = False):
    """Map standard-normal points to physical space.

    ``u`` is a single point of length M or an ``(n, M)`` array. The copula
    is applied as ``z = L u`` with ``L`` the Cholesky factor of the
    correlation matrix, then ``x_i = F_i^-1(Phi(z_i))``. Values of ``z``
    beyond ``+-clip`` are saturated; with ``return_flags=True`` a boolean
    array marks saturated entries.
    """
    u, single = _as_rows(u, model.dim)
    if not np.all(np.isfinite(u)):
        raise ValueError("standard-normal input must be finite")
    z = u if model.independent else u @ model.cholesky.T
    flags = np.abs(z) > clip
    z = np.clip(z, -clip, clip)
    x = np.empty_like(z)
    for i, marg in enumerate(model.marginals):
        x[:, i] = marg.from_normal(z[:, i])
    if single:
        x, flags = x[0], flags[0]
    return (x, flags) if return_flags else x


def to_standard(x, model: InputModel, clip: float = DEFAULT_CLIP, return_flags: bool = False):
    """Map physical points to independent standard-normal space.

    Raises :class:`DomainError` naming the coordinate when a value falls
    outside its marginal's support. Points on the support boundary map to
    ``+-clip`` and are flagged.
    """
    x, single = _as_rows(x, model.dim)
    z = np.empty_like(x)
    flags = np.zeros(x.shape, dtype=bool)
    for i, marg in enumerate(model.marginals):
        z[:, i], flags[:, i] = marg.to_normal(x[:, i], clip=clip, coordinate=i)
    u = z if model.independent else linalg.solve_triangular(model.cholesky, z.T, lower=True).T
    if single:
        u, flags = u[0], flags[0]
    return (u, flags) if return_flags else u


def sobol_design(dim: int, n: int) -> np.ndarray:
    """First ``n`` points of the unscrambled Sobol sequence in ``(0, 1)^dim``.

    Joe-Kuo direction numbers; the initial all-zeros point is skipped.
    """
    if dim < 1:
        raise ValueError("Sobol dimension must be >= 1")
    if dim > qmc.Sobol.MAXDIM:
        raise ValueError(f"Sobol direction numbers cover at most {qmc.Sobol.MAXDIM} dimensions")
    if n < 1:
        raise ValueError("number of Sobol points must be >= 1")
    engine = qmc.Sobol(d=dim, scramble=False)
    engine.fast_forward(1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # balance warning for n != 2^k
        return engine.random(n)


def _block(dim: int, seed, k: int, chunk: int) -> np.ndarray:
    key = [*np.atleast_1d(seed).astype(int).tolist(), k]
    return np.random.default_rng(key).standard_normal((chunk, dim))


class NormalStream:
    """Seeded standard-normal stream with random access by row.

    Row block ``k`` (rows ``k*chunk`` .. ``(k+1)*chunk - 1``) is drawn from a
    generator seeded with ``(*seed, k)``, so any partition of the index range
    reproduces the same sample. ``seed`` is an int or a tuple of ints; the
    most recent block is cached for small sequential reads.
    """

    def __init__(self, dim: int, seed, chunk: int = SAMPLE_CHUNK):
        self.dim, self.seed, self.chunk = dim, seed, chunk
        self._cached: tuple[int, np.ndarray] | None = None

    def block(self, k: int) -> np.ndarray:
        if self._cached is None or self._cached[0] != k:
            self._cached = (k, _block(self.dim, self.seed, k, self.chunk))
        return self._cached[1]

    def rows(self, start: int, stop: int) -> np.ndarray:
        if stop <= start:
            return np.empty((0, self.dim))
        c = self.chunk
        parts = []
        for k in range(start // c, (stop - 1) // c + 1):
            parts.append(self.block(k)[max(start - k * c, 0):min(stop - k * c, c)])
        return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)


def standard_normal_rows(dim: int, start: int, stop: int, seed,
                         chunk: int = SAMPLE_CHUNK) -> np.ndarray:
    """Rows ``start:stop`` of the seeded standard-normal stream (see
    :class:`NormalStream`)."""
    return NormalStream(dim, seed, chunk).rows(start, stop)


def iter_standard_normal(dim: int, n: int, seed, chunk: int = SAMPLE_CHUNK):
    """Yield the seeded standard-normal stream of ``n`` rows chunk by chunk."""
    for k in range(0, (n + chunk - 1) // chunk):
        yield _block(dim, seed, k, chunk)[:min(chunk, n - k * chunk)]


def mcs_sample(model: InputModel, n: int, seed, chunk: int = SAMPLE_CHUNK) -> np.ndarray:
    """Draw ``n`` i.i.d. physical realizations of ``model``."""
    if n < 1:
        raise ValueError("sample size must be >= 1")
    u = standard_normal_rows(model.dim, 0, n, seed, chunk)
    return to_physical(u, model)


def write_sample_csv(path, x: np.ndarray, y: np.ndarray | None = None) -> None:
    """Write a sample matrix as CSV with header ``x1,...,xM`` (plus ``y``)."""
    x = np.atleast_2d(x)
    header = [f"x{i + 1}" for i in range(x.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header + (["y"] if y is not None else []))
        for i, row in enumerate(x):
            vals = [repr(float(v)) for v in row]
            if y is not None:
                vals.append(repr(float(y[i])))
            w.writerow(vals)


@dataclass(frozen=True)
class ExperimentalDesign:
    """Training points and model responses.

    ``u`` holds the points in independent standard-normal space, which is
    where the surrogates are built; ``x`` keeps the physical points when
    known.
    """

    u: np.ndarray
    y: np.ndarray
    x: np.ndarray | None = None

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if u.shape[0] != y.shape[0]:
            raise ValueError(f"{u.shape[0]} points but {y.shape[0]} responses")
        if u.shape[0] < 1:
            raise ValueError("experimental design is empty")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise ValueError("experimental design contains non-finite values")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)

    @property
    def size(self) -> int:
        return self.u.shape[0]

    @property
    def dim(self) -> int:
        return self.u.shape[1]

    def subset(self, idx) -> ExperimentalDesign:
        return ExperimentalDesign(self.u[idx], self.y[idx], None if self.x is None else self.x[idx])

    @classmethod
    def from_physical(cls, x, y, model: InputModel) -> ExperimentalDesign:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return cls(to_standard(x, model), y, x)


def build_design(model_fn: Callable[[np.ndarray], np.ndarray], input_model: InputModel,
                 n: int, kind: str = "sobol", seed: int = 0) -> ExperimentalDesign:
    """Sample an experimental design and evaluate the model on it.

    ``kind='sobol'`` maps unscrambled Sobol points through ``Phi^-1`` to
    standard-normal space; ``kind='mcs'`` uses the seeded normal stream.
    """
    if n < 1:
        raise ValueError("experimental design size must be >= 1")
    if kind == "sobol":
        u = ndtri(sobol_design(input_model.dim, n))
    elif kind == "mcs":
        u = standard_normal_rows(input_model.dim, 0, n, seed)
    else:
        raise ValueError(f"unknown design kind {kind!r}")
    x = to_physical(u, input_model)
    y = np.asarray(model_fn(x), dtype=float).ravel()
    return ExperimentalDesign(u, y, x)


def correlation_from_pairs(dim: int, pairs: Sequence[tuple[int, int, float]]) -> np.ndarray:
    r = np.eye(dim)
    for i, j, rho in pairs:
        r[i, j] = r[j, i] = rho
    return r
