"""Gaussian extension of martingale endpoints, covariance domination for
Gaussian-times-log-concave laws, and convex-order comparisons with the
standard Gaussian."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng as _rng
from .errors import ConfigurationError, InputError, InvariantViolation, PreconditionError
from .geometry import chi_mean, gaussian_max_abs_mean
from .measures import DistributionFamily, sample_stream

QV_TOL = 1e-8


# --------------------------------------------------------------------------
# Gaussian extension


@dataclass(frozen=True, eq=False)
class MartingaleEndpoint:
    M_inf: np.ndarray
    QV: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M_inf, dtype=float).ravel()
        Q = np.asarray(self.QV, dtype=float)
        if Q.shape != (M.size, M.size):
            raise InputError("QV must be n x n")
        Q = 0.5 * (Q + Q.T)
        lam = np.linalg.eigvalsh(Q)
        if lam.min() < -QV_TOL or lam.max() > 1.0 + QV_TOL:
            raise InvariantViolation(f"QV eigenvalues {lam.min():.3e}..{lam.max():.3e} outside [0, 1]")
        object.__setattr__(self, "M_inf", M)
        object.__setattr__(self, "QV", Q)


def _complement_sqrt(QV: np.ndarray) -> np.ndarray:
    """(id - QV)^{1/2}, batched over a leading axis; small negative eigenvalues clamp to 0."""
    n = QV.shape[-1]
    lam, V = np.linalg.eigh(np.eye(n) - QV)
    if lam.min() < -QV_TOL:
        raise InvariantViolation("quadratic variation exceeds the identity")
    root = np.sqrt(np.clip(lam, 0.0, None))
    return (V * root[..., None, :]) @ np.swapaxes(V, -1, -2)


def maurey_extend(endpoint: MartingaleEndpoint, g) -> tuple[np.ndarray, np.ndarray]:
    """Y = M + (id - [M])^{1/2} g and Z = M - (id - [M])^{1/2} g."""
    g = np.asarray(g, dtype=float).ravel()
    if g.size != endpoint.M_inf.size:
        raise InputError("dimension mismatch")
    d = _complement_sqrt(endpoint.QV) @ g
    return endpoint.M_inf + d, endpoint.M_inf - d


def maurey_extend_batch(M: np.ndarray, QV: np.ndarray, g: np.ndarray):
    """Row-wise :func:`maurey_extend`; ``M``, ``g`` are (P, n), ``QV`` is (P, n, n)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    QV = 0.5 * (QV + np.swapaxes(QV, -1, -2))
    lam = np.linalg.eigvalsh(QV)
    if lam.max() > 1.0 + QV_TOL or lam.min() < -QV_TOL:
        raise InvariantViolation("some QV has eigenvalues outside [0, 1]")
    d = (_complement_sqrt(QV) @ g[:, :, None])[..., 0]
    return M + d, M - d


def stopped_endpoints(report, rescale: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """(M, QV) from a stopped run, divided by sqrt(theta) so that QV <= id."""
    M, QV = report.increments, report.quadratic_variation
    if rescale:
        M = M / math.sqrt(report.theta)
        QV = QV / report.theta
    return M, QV


# --------------------------------------------------------------------------
# Gaussian conformance


def gaussian_norm_values(n: int) -> dict:
    return {"l1": n * math.sqrt(2.0 / math.pi), "l2": chi_mean(n), "linf": gaussian_max_abs_mean(n)}


def _norms(x: np.ndarray) -> dict:
    ax = np.abs(x)
    return {"l1": ax.sum(axis=1), "l2": np.sqrt(np.einsum("ij,ij->i", x, x)), "linf": ax.max(axis=1)}


@dataclass(frozen=True, eq=False)
class ConformanceReport:
    mean_deviation: float
    covariance_deviation: float
    mean_z: np.ndarray
    second_moment_z: np.ndarray
    norm_gaps: dict
    norm_z: dict
    sample_count: int
    threshold: float
    passed: bool
    seed: int | None = None

    def to_json(self) -> dict:
        return {
            "deviations": {
                "mean": self.mean_deviation,
                "covariance_op": self.covariance_deviation,
                "norm_gaps": dict(sorted(self.norm_gaps.items())),
            },
            "z_scores": {
                "mean": self.mean_z.tolist(),
                "second_moment": self.second_moment_z.tolist(),
                "norms": dict(sorted(self.norm_z.items())),
            },
            "thresholds": {"z": self.threshold},
            "sample_count": self.sample_count,
            "result": "pass" if self.passed else "fail",
            "seed": self.seed,
        }


def gaussian_conformance(samples, threshold: float = 4.0, seed: int | None = None) -> ConformanceReport:
    """Compare samples with the standard Gaussian through first and second
    moments and the l1/l2/linf norm expectations; every deviation must stay
    within ``threshold`` standard errors."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    N, n = x.shape
    if N < 1000:
        raise InputError("conformance needs at least 1000 samples")
    mean = x.mean(axis=0)
    mean_z = np.abs(mean) / (x.std(axis=0, ddof=1) / math.sqrt(N))
    prod = x[:, :, None] * x[:, None, :]
    second = prod.mean(axis=0)
    second_se = prod.std(axis=0, ddof=1) / math.sqrt(N)
    second_z = np.abs(second - np.eye(n)) / second_se
    cov = np.cov(x, rowvar=False).reshape(n, n)
    cov_dev = float(np.linalg.norm(cov - np.eye(n), 2))
    exact = gaussian_norm_values(n)
    gaps, zs = {}, {}
    for name, vals in _norms(x).items():
        gaps[name] = float(vals.mean() - exact[name])
        zs[name] = abs(gaps[name]) / (vals.std(ddof=1) / math.sqrt(N))
    passed = bool(mean_z.max() <= threshold and second_z.max() <= threshold
                  and max(zs.values()) <= threshold)
    return ConformanceReport(float(np.abs(mean).max()), cov_dev, mean_z, second_z, gaps, zs, N,
                             threshold, passed, seed)


# --------------------------------------------------------------------------
# convex functionals


@dataclass(frozen=True, eq=False)
class ConvexFunctional:
    name: str
    fn: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    gaussian_exact: Callable[[int], float] | None = field(default=None, repr=False)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.fn(np.atleast_2d(x))


def max_linear_forms(C) -> ConvexFunctional:
    C = np.asarray(C, dtype=float)
    return ConvexFunctional("max-linear", lambda x: (x @ C.T).max(axis=1))


def convex_catalog(n: int) -> list[ConvexFunctional]:
    forms = np.vstack([np.eye(n), -np.ones((1, n)) / math.sqrt(n)])
    return [
        ConvexFunctional("l1", lambda x: np.abs(x).sum(axis=1), lambda k: k * math.sqrt(2 / math.pi)),
        ConvexFunctional("l2", lambda x: np.sqrt(np.einsum("ij,ij->i", x, x)), chi_mean),
        ConvexFunctional("linf", lambda x: np.abs(x).max(axis=1), gaussian_max_abs_mean),
        max_linear_forms(forms),
    ]


def functional_from_name(name: str, n: int) -> ConvexFunctional:
    for phi in convex_catalog(n):
        if phi.name == name:
            return phi
    raise ConfigurationError(f"{name!r} is not in the convex catalog")


def _gaussian_expectation(phi: ConvexFunctional, n: int, N: int, seed: int, stream: int):
    if phi.gaussian_exact is not None:
        return float(phi.gaussian_exact(n)), 0.0
    g = _rng.chunked_draw(lambda gen, k: gen.standard_normal((k, n)), N, _rng.Stream(seed, stream))
    v = phi(g)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(N))


@dataclass(frozen=True)
class GapReport:
    functional: str
    E_phi_X: float
    se_X: float
    E_phi_Gamma: float
    se_Gamma: float
    gap: float
    gap_se: float
    threshold: float
    passed: bool
    sample_count: int
    seed: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _gap_report(phi, values, n, N_gauss, seed, stream, threshold, ok_side) -> GapReport:
    ex = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    eg, seg = _gaussian_expectation(phi, n, N_gauss, seed, stream)
    gap = ex - eg
    gse = math.hypot(se, seg)
    return GapReport(phi.name, ex, se, eg, seg, gap, gse, threshold, bool(ok_side(gap, gse)),
                     int(values.size), seed)


def convex_dominance_check(endpoints, phi: ConvexFunctional | str, QV: np.ndarray | None = None,
                           N_gauss: int = 100_000, seed: int = 0, stream: int = 7,
                           threshold: float = 3.0) -> GapReport:
    """E phi(M_inf) - E phi(Gamma); passes when the gap is at most
    ``threshold`` standard errors above zero."""
    if isinstance(endpoints, (list, tuple)) and endpoints and isinstance(endpoints[0], MartingaleEndpoint):
        QV = np.stack([e.QV for e in endpoints])
        endpoints = np.stack([e.M_inf for e in endpoints])
    M = np.atleast_2d(np.asarray(endpoints, dtype=float))
    n = M.shape[1]
    if isinstance(phi, str):
        phi = functional_from_name(phi, n)
    if M.shape[0] < 1000:
        raise InputError("need at least 1000 endpoints")
    if QV is not None and np.linalg.eigvalsh(QV).max() > 1.0 + QV_TOL:
        raise PreconditionError("quadratic variation must be <= id")
    return _gap_report(phi, phi(M), n, N_gauss, seed, stream, threshold,
                       lambda gap, gse: gap <= threshold * gse)


# --------------------------------------------------------------------------
# covariance domination and the convex-order comparison


@dataclass(frozen=True, eq=False)
class PSDReport:
    covariance: np.ndarray
    reference: np.ndarray
    standard_error: float
    margin: float
    threshold: float
    passed: bool
    sample_count: int
    seed: int

    def to_json(self) -> dict:
        return {"covariance": self.covariance.tolist(), "reference": self.reference.tolist(),
                "standard_error": self.standard_error, "margin": self.margin,
                "threshold": self.threshold, "result": "pass" if self.passed else "fail",
                "sample_count": self.sample_count, "seed": self.seed}


def _require_truncated(family: DistributionFamily) -> None:
    if family.kind != "truncated-gaussian":
        raise ConfigurationError("expected a truncated-gaussian family")


def brascamp_lieb_check(family: DistributionFamily, N: int = 100_000, seed: int = 0, stream: int = 0,
                        threshold: float = 4.0) -> PSDReport:
    """Estimate cov(X) for X = Gaussian(precision B) restricted to a convex
    region and report the smallest eigenvalue of B^{-1} - cov(X)."""
    _require_truncated(family)
    x = sample_stream(family, N, _rng.Stream(seed, stream))
    y = x - x.mean(axis=0)
    prod = y[:, :, None] * y[:, None, :]
    cov = prod.sum(axis=0) / (N - 1)
    se = float((prod.std(axis=0, ddof=1) / math.sqrt(N)).max())
    ref = np.linalg.inv(family.precision)
    margin = float(np.linalg.eigvalsh(ref - cov).min())
    return PSDReport(cov, ref, se, margin, threshold, margin >= -threshold * se, N, seed)


def harge_check(family: DistributionFamily, phi: ConvexFunctional | str, N: int = 100_000,
                seed: int = 0, stream: int = 0, threshold: float = 3.0) -> GapReport:
    """E phi(X) - E phi(Gamma) for a centered law more log-concave than Gamma.

    The law must be centered by construction (symmetric region); shifting
    samples to mean zero is not allowed.
    """
    _require_truncated(family)
    if not family.is_centered:
        raise PreconditionError("family is not centered (region must be symmetric)")
    n = family.dimension
    if np.linalg.eigvalsh(family.precision - np.eye(n)).min() < -1e-12:
        raise PreconditionError("precision must dominate the identity")
    if isinstance(phi, str):
        phi = functional_from_name(phi, n)
    x = sample_stream(family, N, _rng.Stream(seed, stream))
    return _gap_report(phi, phi(x), n, N, seed, stream + 1, threshold,
                       lambda gap, gse: gap <= threshold * gse)
