"""Gauges, polar bodies, sphere averages and the norm-comparison experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize, special, stats

from . import rng as _rng
from .errors import CapabilityError, ConfigurationError, InputError, PreconditionError
from .measures import SQRT3, DistributionFamily, sample_stream

NORM_KINDS = ("lp", "weighted-lp", "polytope-facets", "polytope-vertices", "linear-euclidean")
MAX_POLYTOPE = 128


@dataclass(frozen=True, eq=False)
class NormSpec:
    """A gauge on R^n.

    ``lp``: ||x||_p.  ``weighted-lp``: ||scale * x||_p.  ``polytope-facets``:
    K = {x : <f_i, x> <= 1}.  ``polytope-vertices``: K = conv(v_j).
    ``linear-euclidean``: |L x|.
    """

    kind: str
    dimension: int
    p: float = 2.0
    scale: np.ndarray | None = None
    facets: np.ndarray | None = None
    vertices: np.ndarray | None = None
    matrix: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in NORM_KINDS:
            raise ConfigurationError(f"unknown norm kind {self.kind!r}")
        if self.kind in ("lp", "weighted-lp") and not self.p >= 1:
            raise ConfigurationError("p must lie in [1, inf]")
        if self.kind == "weighted-lp":
            s = np.asarray(self.scale, dtype=float)
            if s.shape != (self.dimension,) or np.any(s <= 0):
                raise ConfigurationError("scale must be a positive n-vector")
            object.__setattr__(self, "scale", s)
        for attr in ("facets", "vertices"):
            if self.kind == f"polytope-{attr}":
                P = np.asarray(getattr(self, attr), dtype=float)
                if P.ndim != 2 or P.shape[1] != self.dimension:
                    raise ConfigurationError(f"{attr} must be an (m, n) array")
                if P.shape[0] > MAX_POLYTOPE:
                    raise CapabilityError(f"polytope gauges are limited to {MAX_POLYTOPE} {attr}")
                if np.linalg.matrix_rank(P) < self.dimension:
                    raise ConfigurationError("polytope must be bounded with 0 in its interior")
                object.__setattr__(self, attr, P)
        if self.kind == "linear-euclidean":
            L = np.asarray(self.matrix, dtype=float)
            if L.shape != (self.dimension, self.dimension) or abs(np.linalg.det(L)) < 1e-12:
                raise ConfigurationError("matrix must be an invertible n x n array")
            object.__setattr__(self, "matrix", L)
        if not self.name:
            object.__setattr__(self, "name", self._default_name())

    def _default_name(self) -> str:
        if self.kind == "lp":
            return "linf" if math.isinf(self.p) else f"l{self.p:g}"
        return self.kind

    @classmethod
    def lp(cls, n: int, p: float) -> "NormSpec":
        return cls("lp", n, p=float(p))

    @classmethod
    def weighted(cls, scale, p: float) -> "NormSpec":
        scale = np.asarray(scale, dtype=float)
        return cls("weighted-lp", scale.size, p=float(p), scale=scale)

    @classmethod
    def polytope_facets(cls, facets) -> "NormSpec":
        facets = np.asarray(facets, dtype=float)
        return cls("polytope-facets", facets.shape[1], facets=facets)

    @classmethod
    def polytope_vertices(cls, vertices) -> "NormSpec":
        vertices = np.asarray(vertices, dtype=float)
        return cls("polytope-vertices", vertices.shape[1], vertices=vertices)

    @classmethod
    def linear(cls, matrix) -> "NormSpec":
        matrix = np.asarray(matrix, dtype=float)
        return cls("linear-euclidean", matrix.shape[0], matrix=matrix)

    def __call__(self, x) -> np.ndarray:
        return gauge_eval(self, x)


def norm_catalog(n: int) -> list[NormSpec]:
    """Norms exercised by the experiments: l1, l2, linf."""
    return [NormSpec.lp(n, 1), NormSpec.lp(n, 2), NormSpec.lp(n, math.inf)]


def norm_from_name(name: str, n: int) -> NormSpec:
    names = {"l1": 1.0, "l2": 2.0, "linf": math.inf, "cube": math.inf, "cross": 1.0, "ball": 2.0}
    if name in names:
        return NormSpec.lp(n, names[name])
    if name.startswith("l"):
        try:
            return NormSpec.lp(n, float(name[1:]))
        except ValueError:
            pass
    raise ConfigurationError(f"unknown norm {name!r}")


def _lp(x: np.ndarray, p: float) -> np.ndarray:
    ax = np.abs(x)
    if math.isinf(p):
        return ax.max(axis=1)
    if p == 1:
        return ax.sum(axis=1)
    if p == 2:
        return np.sqrt(np.einsum("ij,ij->i", x, x))
    top = ax.max(axis=1)
    safe = np.where(top > 0, top, 1.0)
    return top * ((ax / safe[:, None]) ** p).sum(axis=1) ** (1.0 / p)


def _vertex_gauge(V: np.ndarray, x: np.ndarray) -> float:
    # min sum(lam) s.t. V^T lam = x, lam >= 0
    res = optimize.linprog(np.ones(V.shape[0]), A_eq=V.T, b_eq=x, bounds=(0, None), method="highs")
    if res.status != 0:
        raise CapabilityError(f"vertex gauge LP failed: {res.message}")
    return float(res.fun)


def gauge_eval(spec: NormSpec, x) -> np.ndarray | float:
    """Gauge of ``x``; vectorized over rows when ``x`` is (N, n)."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    X = np.atleast_2d(arr)
    if X.shape[1] != spec.dimension:
        raise InputError(f"dimension mismatch: {X.shape[1]} != {spec.dimension}")
    if not np.all(np.isfinite(X)):
        raise InputError("x must be finite")
    if spec.kind == "lp":
        out = _lp(X, spec.p)
    elif spec.kind == "weighted-lp":
        out = _lp(X * spec.scale, spec.p)
    elif spec.kind == "polytope-facets":
        out = np.maximum((X @ spec.facets.T).max(axis=1), 0.0)
    elif spec.kind == "polytope-vertices":
        out = np.array([_vertex_gauge(spec.vertices, row) for row in X])
    else:
        out = np.sqrt(np.einsum("ij,ij->i", X @ spec.matrix.T, X @ spec.matrix.T))
    return float(out[0]) if single else out


def _conjugate(p: float) -> float:
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def polar_gauge(spec: NormSpec) -> NormSpec:
    """Gauge of the polar body (the dual norm for symmetric bodies)."""
    if spec.kind == "lp":
        return NormSpec.lp(spec.dimension, _conjugate(spec.p))
    if spec.kind == "weighted-lp":
        return NormSpec.weighted(1.0 / spec.scale, _conjugate(spec.p))
    if spec.kind == "polytope-facets":
        return NormSpec.polytope_vertices(spec.facets)
    if spec.kind == "polytope-vertices":
        return NormSpec.polytope_facets(spec.vertices)
    if spec.kind == "linear-euclidean":
        return NormSpec.linear(np.linalg.inv(spec.matrix).T)
    raise CapabilityError(f"no polar for {spec.kind}")


def cube_facets(n: int, half_width: float = 1.0) -> np.ndarray:
    eye = np.eye(n) / half_width
    return np.vstack([eye, -eye])


def cross_polytope_vertices(n: int, radius: float = 1.0) -> np.ndarray:
    eye = np.eye(n) * radius
    return np.vstack([eye, -eye])


# --------------------------------------------------------------------------
# Gaussian and sphere averages


@dataclass(frozen=True)
class EstimatorReport:
    estimate: float
    sample_count: int
    standard_error: float
    ci_low: float
    ci_high: float
    seed: int | None = None
    method: str = "monte-carlo"

    @classmethod
    def from_samples(cls, values: np.ndarray, seed=None) -> "EstimatorReport":
        m = float(values.mean())
        se = float(values.std(ddof=1) / math.sqrt(values.size))
        return cls(m, int(values.size), se, m - 1.96 * se, m + 1.96 * se, seed)

    @classmethod
    def exact(cls, value: float, method: str = "closed-form") -> "EstimatorReport":
        return cls(float(value), 0, 0.0, float(value), float(value), None, method)

    def to_json(self) -> dict:
        return {
            "estimate": self.estimate,
            "sample_count": self.sample_count,
            "standard_error": self.standard_error,
            "ci": [self.ci_low, self.ci_high],
            "seed": self.seed,
            "method": self.method,
        }


def chi_mean(n: int) -> float:
    """E|G| for a standard Gaussian G in R^n: sqrt(2) Gamma((n+1)/2) / Gamma(n/2)."""
    return float(math.sqrt(2.0) * math.exp(special.gammaln((n + 1) / 2.0) - special.gammaln(n / 2.0)))


def gaussian_max_abs_mean(n: int) -> float:
    """E max_i |G_i| by one-dimensional quadrature."""
    f = lambda t: -math.expm1(n * math.log1p(-2.0 * stats.norm.sf(t)))  # noqa: E731
    val, _ = integrate.quad(f, 0.0, np.inf, limit=200)
    return float(val)


def gaussian_norm_closed_form(spec: NormSpec) -> float | None:
    n = spec.dimension
    if spec.kind == "lp" and spec.p == 1:
        return n * math.sqrt(2.0 / math.pi)
    if spec.kind == "lp" and spec.p == 2:
        return chi_mean(n)
    if spec.kind == "weighted-lp" and spec.p == 1:
        return float(spec.scale.sum()) * math.sqrt(2.0 / math.pi)
    return None


def gaussian_norm_expectation(spec: NormSpec, N: int | None = None, seed: int = 0,
                              stream: int = 0) -> EstimatorReport:
    """E||G|| for a standard Gaussian G.

    Closed form for l1 and l2 when ``N`` is None; Monte Carlo otherwise (and
    always for norms without a closed form, ``N`` defaulting to 10^5).
    """
    if N is None:
        closed = gaussian_norm_closed_form(spec)
        if closed is not None:
            return EstimatorReport.exact(closed)
        N = 100_000
    if N < 10_000:
        raise InputError("Monte-Carlo estimates need N >= 10^4")
    g = _rng.chunked_draw(lambda gen, k: gen.standard_normal((k, spec.dimension)), N,
                          _rng.Stream(seed, stream))
    return EstimatorReport.from_samples(np.asarray(gauge_eval(spec, g)), seed)


def sample_sphere(count: int, n: int, gen: np.random.Generator) -> np.ndarray:
    g = gen.standard_normal((count, n))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def mean_width_M(spec: NormSpec, N: int = 100_000, seed: int = 0, stream: int = 0) -> EstimatorReport:
    """Average of the gauge over the uniform measure on the unit sphere."""
    if N < 10_000:
        raise InputError("N must be >= 10^4")
    if spec.p == 2 and spec.kind in ("lp", "weighted-lp"):
        scale = np.ones(1) if spec.kind == "lp" else np.asarray(spec.scale)
        if np.all(scale == scale.flat[0]):
            # the gauge is constant on the sphere
            return EstimatorReport.exact(float(scale.flat[0]), "exact")
    theta = _rng.chunked_draw(lambda gen, k: sample_sphere(k, spec.dimension, gen), N,
                              _rng.Stream(seed, stream))
    return EstimatorReport.from_samples(np.asarray(gauge_eval(spec, theta)), seed)


def mean_width_Mstar(spec: NormSpec, N: int = 100_000, seed: int = 0, stream: int = 0) -> EstimatorReport:
    return mean_width_M(polar_gauge(spec), N, seed, stream)


# --------------------------------------------------------------------------
# bodies


@dataclass(frozen=True, eq=False)
class BodySpec:
    name: str
    gauge: NormSpec
    log_volume: float | None = None
    isotropic: bool = False
    family: DistributionFamily | None = None

    @property
    def dimension(self) -> int:
        return self.gauge.dimension

    @property
    def volume(self) -> float | None:
        return None if self.log_volume is None else math.exp(self.log_volume)


def isotropic_cube(n: int) -> BodySpec:
    """[-sqrt3, sqrt3]^n: unit coordinate variance forces the side length."""
    gauge = NormSpec.weighted(np.full(n, 1.0 / SQRT3), math.inf)
    return BodySpec("cube", gauge, n * math.log(2.0 * SQRT3), True, DistributionFamily.cube(n))


def isotropic_ball(n: int) -> BodySpec:
    """Euclidean ball of radius sqrt(n+2) (uniform covariance r^2/(n+2) = id)."""
    r = math.sqrt(n + 2.0)
    gauge = NormSpec.weighted(np.full(n, 1.0 / r), 2.0)
    logvol = 0.5 * n * math.log(math.pi) - special.gammaln(0.5 * n + 1.0) + n * math.log(r)
    return BodySpec("ball", gauge, float(logvol), True, DistributionFamily.ball(n))


def body_from_name(name: str, n: int) -> BodySpec:
    if name == "cube":
        return isotropic_cube(n)
    if name in ("ball", "disc"):
        return isotropic_ball(n)
    raise ConfigurationError(f"unknown body {name!r}")


def isotropic_constant(body: BodySpec) -> float:
    """L_K = |K|^{-1/n} for an isotropic body with known volume."""
    if body.log_volume is None:
        raise CapabilityError(f"volume of {body.name} is unknown")
    if not body.isotropic:
        raise PreconditionError(f"{body.name} is not isotropic")
    return math.exp(-body.log_volume / body.dimension)


# --------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class CompareReport:
    family: str
    norm: str
    n: int
    E_X: EstimatorReport
    E_Gamma: EstimatorReport
    ratio: float
    ratio_se: float
    tau_hat: float
    constant: float
    bound: float
    seed: int

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "norm": self.norm,
            "n": self.n,
            "E_X": self.E_X.to_json(),
            "E_Gamma": self.E_Gamma.to_json(),
            "ratio": self.ratio,
            "ratio_se": self.ratio_se,
            "tau_hat": self.tau_hat,
            "constant": self.constant,
            "bound": self.bound,
            "seed": self.seed,
        }

    def csv_row(self) -> list:
        return [self.n, self.family, self.norm, self.E_X.estimate, self.E_Gamma.estimate,
                self.ratio, self.tau_hat, self.bound]


CSV_HEADER = ["n", "family", "norm", "E_X", "E_Gamma", "ratio", "tau_hat", "bound"]


def compare_norms_experiment(family: DistributionFamily, spec: NormSpec, N: int = 100_000,
                             seed: int = 0, stream: int = 0, tau_hat: float | None = None,
                             constant: float = 10.0) -> CompareReport:
    """Monte-Carlo E||X|| and E||G|| (independent streams), their ratio and
    the right-hand side constant * sqrt(log n) * tau_hat."""
    if not family.is_isotropic:
        raise PreconditionError("family must be isotropic")
    n = family.dimension
    if spec.dimension != n:
        raise InputError("norm and family dimensions differ")
    if tau_hat is None:
        from .constants import estimate_tau

        tau_hat = estimate_tau(family, N=max(N, 10_000), seed=seed, stream=stream + 2).tau
    x = sample_stream(family, N, _rng.Stream(seed, stream))
    ex = EstimatorReport.from_samples(np.asarray(gauge_eval(spec, x)), seed)
    eg = gaussian_norm_expectation(spec, N=N, seed=seed, stream=stream + 1)
    ratio = ex.estimate / eg.estimate
    ratio_se = ratio * math.hypot(ex.standard_error / ex.estimate, eg.standard_error / eg.estimate)
    bound = constant * math.sqrt(math.log(n)) * tau_hat
    return CompareReport(family.kind, spec.name, n, ex, eg, ratio, ratio_se, float(tau_hat),
                         constant, bound, seed)


@dataclass(frozen=True)
class CorollaryReport:
    body: str
    n: int
    E_gauge: EstimatorReport
    E_polar_gauge: EstimatorReport
    E_sq_norm: EstimatorReport
    M: EstimatorReport
    Mstar: EstimatorReport
    tau: float
    c: float
    C: float
    bound_i: float
    bound_ii: float
    L_K: float | None
    bound_iii: float
    gauge_step_holds: bool
    polar_step_holds: bool
    seed: int

    def to_json(self) -> dict:
        return {
            "body": self.body,
            "n": self.n,
            "E_gauge": self.E_gauge.to_json(),
            "E_polar_gauge": self.E_polar_gauge.to_json(),
            "E_sq_norm": self.E_sq_norm.to_json(),
            "M": self.M.to_json(),
            "Mstar": self.Mstar.to_json(),
            "tau": self.tau,
            "c": self.c,
            "C": self.C,
            "bound_i": self.bound_i,
            "bound_ii": self.bound_ii,
            "L_K": self.L_K,
            "bound_iii": self.bound_iii,
            "gauge_step_holds": self.gauge_step_holds,
            "polar_step_holds": self.polar_step_holds,
            "seed": self.seed,
        }


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else math.inf


def corollary_checks(body: BodySpec, N: int = 100_000, seed: int = 0, stream: int = 0,
                     tau: float | None = None, c: float = 0.01, C: float = 10.0) -> CorollaryReport:
    """Monte-Carlo check of E||X||_K >= 1/4 and E||X||_{K°} >= E|X|^2 = n for X
    uniform on an isotropic body, plus both sides of the lower bounds on M, M*.

    ``tau`` defaults to the largest catalog estimate (a lower bound on the
    supremum it stands in for).
    """
    if not body.isotropic or body.family is None:
        raise PreconditionError("body must be isotropic with a uniform sampler")
    n = body.dimension
    if tau is None:
        from .constants import catalog_tau

        tau = catalog_tau(n, seed=seed)
    x = sample_stream(body.family, N, _rng.Stream(seed, stream))
    g = EstimatorReport.from_samples(np.asarray(gauge_eval(body.gauge, x)), seed)
    pg = EstimatorReport.from_samples(np.asarray(gauge_eval(polar_gauge(body.gauge), x)), seed)
    sq = EstimatorReport.from_samples(np.einsum("ij,ij->i", x, x), seed)
    M = mean_width_M(body.gauge, N, seed, stream + 1)
    Ms = mean_width_Mstar(body.gauge, N, seed, stream + 2)
    logn = math.log(n)
    bound_i = _safe_div(c, math.sqrt(n * logn) * tau)
    bound_ii = _safe_div(c * math.sqrt(n), math.sqrt(logn) * tau)
    L = isotropic_constant(body) if body.log_volume is not None else None
    bound_iii = C * tau * logn**1.5
    return CorollaryReport(
        body.name, n, g, pg, sq, M, Ms, float(tau), c, C, bound_i, bound_ii, L, bound_iii,
        g.estimate >= 0.25, pg.estimate >= n - 2.0 * pg.standard_error, seed,
    )
