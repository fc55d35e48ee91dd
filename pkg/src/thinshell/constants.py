"""Thin-shell quantities: var|X|, the third-moment constant tau, and the
restricted-expectation diagnostic."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng as _rng
from .errors import CapabilityError, ConfigurationError, InputError, NumericalError, PreconditionError
from .geometry import NormSpec, gauge_eval
from .measures import DistributionFamily, sample, sample_stream, third_moment_tensor

BOOTSTRAP_KEY = 2**31 - 1
CATALOG = ("standard-gaussian", "product-exponential-centered", "uniform-cube-isotropic",
           "uniform-ball-isotropic")


@dataclass(frozen=True)
class SigmaEstimate:
    family: str
    n: int
    variance: float
    sample_count: int
    ci_low: float
    ci_high: float
    seed: int

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)

    @property
    def ci_halfwidth(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)

    def to_json(self) -> dict:
        return {"family": self.family, "n": self.n, "N": self.sample_count,
                "estimate": self.variance, "CI": [self.ci_low, self.ci_high], "seed": self.seed}


@dataclass(frozen=True, eq=False)
class TauEstimate:
    family: str
    n: int
    tau_squared: float
    direction: np.ndarray
    sample_count: int
    standard_error: float
    seed: int

    @property
    def tau(self) -> float:
        return math.sqrt(self.tau_squared)

    def to_json(self) -> dict:
        return {"family": self.family, "n": self.n, "N": self.sample_count,
                "estimate": self.tau, "tau_squared": self.tau_squared,
                "CI": [self.tau - 1.96 * self.standard_error, self.tau + 1.96 * self.standard_error],
                "standard_error": self.standard_error, "direction": self.direction.tolist(),
                "seed": self.seed}


def _require_isotropic(family: DistributionFamily) -> None:
    if not family.is_isotropic:
        raise PreconditionError(f"{family.kind} is not isotropic")


def thin_shell_gaussian(n: int) -> float:
    """var|G| = n - (E|G|)^2 for a standard Gaussian in R^n."""
    from .geometry import chi_mean

    return n - chi_mean(n) ** 2


def estimate_sigma(family: DistributionFamily, N: int = 100_000, seed: int = 0, stream: int = 0,
                   resamples: int = 200) -> SigmaEstimate:
    """Unbiased sample variance of |X| with a percentile bootstrap 95% interval."""
    _require_isotropic(family)
    if N < 1000:
        raise InputError("N must be >= 10^3")
    x = sample_stream(family, N, _rng.Stream(seed, stream))
    r = np.sqrt(np.einsum("ij,ij->i", x, x))
    var = float(r.var(ddof=1))
    gen = _rng.generator(seed, stream, BOOTSTRAP_KEY)
    boot = np.empty(resamples)
    for b in range(resamples):
        boot[b] = r[gen.integers(0, N, N)].var(ddof=1)
    lo, hi = np.percentile(boot, [2.5, 97.5])
    return SigmaEstimate(family.kind, family.dimension, var, N, float(lo), float(hi), seed)


def tau_matrix(T: np.ndarray) -> np.ndarray:
    """M[k, l] = sum_{i,j} T[i, j, k] T[i, j, l]; sup over unit theta of
    sum_{i,j} (sum_k T[i, j, k] theta_k)^2 is its top eigenvalue."""
    n = T.shape[0]
    flat = T.reshape(n * n, n)
    M = flat.T @ flat
    return 0.5 * (M + M.T)


def power_iteration(M: np.ndarray, tol: float = 1e-12, max_iter: int = 10_000):
    """Top eigenpair of a symmetric PSD matrix.

    Starts at the basis vector of the largest diagonal entry; stops when the
    Rayleigh quotient changes by at most ``tol`` relative.
    """
    n = M.shape[0]
    v = np.zeros(n)
    v[int(np.argmax(np.diag(M)))] = 1.0
    lam = float(v @ M @ v)
    for _ in range(max_iter):
        w = M @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v
        v = w / norm
        new = float(v @ M @ v)
        if abs(new - lam) <= tol * max(abs(new), np.finfo(float).tiny):
            return new, v
        lam = new
    raise NumericalError(f"power iteration did not converge in {max_iter} iterations")


def _tau_from_tensor(T: np.ndarray):
    lam, v = power_iteration(tau_matrix(T))
    return max(lam, 0.0), v


def estimate_tau(family: DistributionFamily, N: int = 100_000, seed: int = 0, stream: int = 0,
                 batches: int = 10, chunk: int = 1 << 14) -> TauEstimate:
    """tau^2 = sup_theta sum_{i,j} (E X_i X_j <X, theta>)^2 from sample moments.

    Samples are streamed chunk by chunk; the standard error proxy is the
    batch-means spread of tau over ``batches`` contiguous groups.
    """
    _require_isotropic(family)
    if N < 10_000:
        raise InputError("N must be >= 10^4")
    n = family.dimension
    st = _rng.Stream(seed, stream)
    bounds = np.linspace(0, N, batches + 1).astype(int)
    starts = list(range(0, N, chunk))

    def partial(job):
        ci, s = job
        size = min(chunk, N - s)
        x = sample(family, size, st.generator(ci))
        acc = np.zeros((batches, n, n, n))
        for b in range(batches):
            lo, hi = max(bounds[b], s), min(bounds[b + 1], s + size)
            if hi > lo:
                acc[b] = third_moment_tensor(x[lo - s:hi - s]) * (hi - lo)
        return acc

    total = np.zeros((batches, n, n, n))
    for part in _rng.pmap(partial, list(enumerate(starts))):
        total += part
    return _tau_from_batches(total, np.diff(bounds), family.kind, seed)


def _tau_from_batches(total: np.ndarray, sizes: np.ndarray, label: str, seed) -> TauEstimate:
    batches, n = total.shape[0], total.shape[1]
    N = int(sizes.sum())
    lam, v = _tau_from_tensor(total.sum(axis=0) / N)
    per = np.array([math.sqrt(_tau_from_tensor(total[b] / sizes[b])[0]) for b in range(batches)])
    se = float(per.std(ddof=1) / math.sqrt(batches))
    return TauEstimate(label, n, lam, v, N, se, seed)


def tau_from_samples(x, batches: int = 10) -> TauEstimate:
    """The same estimator applied to a fixed (N, n) sample array."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    N, n = x.shape
    if N < 10_000:
        raise InputError("N must be >= 10^4")
    bounds = np.linspace(0, N, batches + 1).astype(int)
    total = np.stack([third_moment_tensor(x[bounds[b]:bounds[b + 1]]) * (bounds[b + 1] - bounds[b])
                      for b in range(batches)])
    return _tau_from_batches(total, np.diff(bounds), "samples", None)


def catalog_tau(n: int, N: int = 20_000, seed: int = 0) -> float:
    """Largest tau estimate over the isotropic catalog: a lower bound on tau_n."""
    return max(estimate_tau(DistributionFamily(kind, n), N=N, seed=seed, stream=100 + i).tau
               for i, kind in enumerate(CATALOG))


def tau_bound_from_sigma(sigma_values: Sequence[float], constant: float = 1.0) -> float:
    """constant * sqrt(sum_k sigma_k^2 / k), sigma indexed from k = 1."""
    s = np.asarray(sigma_values, dtype=float)
    if s.size == 0:
        raise InputError("need at least one sigma value")
    if np.any(s < 0):
        raise InputError("sigma values must be non-negative")
    k = np.arange(1, s.size + 1)
    return float(constant * math.sqrt(np.sum(s**2 / k)))


# --------------------------------------------------------------------------
# restricted expectations


@dataclass(frozen=True)
class Event:
    """``norm-exceeds``: |X| > r.  ``coordinate-exceeds``: X_1 > r."""

    kind: str
    r: float

    def __post_init__(self):
        if self.kind not in ("norm-exceeds", "coordinate-exceeds"):
            raise ConfigurationError(f"unknown event {self.kind!r}")

    def indicator(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "norm-exceeds":
            return np.sqrt(np.einsum("ij,ij->i", x, x)) > self.r
        return x[:, 0] > self.r


@dataclass(frozen=True)
class RestrictedReport:
    ratio: float
    probability: float
    restricted_mean: float
    full_mean: float
    event_count: int
    sample_count: int
    seed: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def restricted_norm_expectation(family: DistributionFamily, norm: NormSpec, event: Event,
                                N: int = 100_000, seed: int = 0, stream: int = 0) -> RestrictedReport:
    """E(||X||; F) / (sqrt(P(F)) E||X||).  Reported, never compared to a constant."""
    if N < 10_000:
        raise InputError("N must be >= 10^4")
    x = sample_stream(family, N, _rng.Stream(seed, stream))
    vals = np.asarray(gauge_eval(norm, x))
    full = float(vals.mean())
    if math.isinf(event.r) and event.r > 0:
        return RestrictedReport(0.0, 0.0, 0.0, full, 0, N, seed)
    hit = event.indicator(x)
    count = int(hit.sum())
    if count < 10:
        raise CapabilityError(f"event too rare: {count} hits in {N} samples")
    p = count / N
    restricted = float(np.where(hit, vals, 0.0).mean())
    return RestrictedReport(restricted / (math.sqrt(p) * full), p, restricted, full, count, N, seed)
