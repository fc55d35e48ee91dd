"""A quick invariant suite covering every module; used by ``thinshell verify``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import coupling, geometry, localization
from . import constants as const
from . import rng as _rng
from .measures import DiscreteMeasure, DistributionFamily, Region, discretize_density, t2_distance


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))

    def to_json(self) -> dict:
        return {"name": self.name, "result": "pass" if self.passed else "fail", "detail": self.detail}


def _quantile_t2(x, p, y, q) -> float:
    """1D transport cost via the monotone (quantile) coupling."""
    ix, iy = np.argsort(x), np.argsort(y)
    x, p, y, q = x[ix], p[ix], y[iy], q[iy]
    cuts = np.unique(np.concatenate([np.cumsum(p), np.cumsum(q)]))
    cuts = np.concatenate([[0.0], np.minimum(cuts, 1.0)])
    mids = 0.5 * (cuts[1:] + cuts[:-1])
    fx = x[np.minimum(np.searchsorted(np.cumsum(p), mids), x.size - 1)]
    fy = y[np.minimum(np.searchsorted(np.cumsum(q), mids), y.size - 1)]
    return float(np.sum(np.diff(cuts) * (fx - fy) ** 2))


def _check_t2(seed: int) -> CheckResult:
    gen = _rng.generator(seed, 901)
    worst = 0.0
    for _ in range(5):
        mu = DiscreteMeasure.from_unnormalized(gen.normal(size=(7, 1)), gen.random(7) + 0.1)
        nu = DiscreteMeasure.from_unnormalized(gen.normal(size=(5, 1)), gen.random(5) + 0.1)
        lp = t2_distance(mu, nu)
        oracle = _quantile_t2(mu.atoms[:, 0], mu.weights, nu.atoms[:, 0], nu.weights)
        worst = max(worst, abs(lp - oracle))
    return CheckResult("t2-matches-quantile-coupling", worst < 1e-8, f"max deviation {worst:.2e}")


def _check_step_invariants(seed: int) -> CheckResult:
    gen = _rng.generator(seed, 902)
    mu = DiscreteMeasure.from_unnormalized(gen.normal(size=(6, 2)), gen.random(6) + 0.1)
    state = localization.init(mu)
    lo, hi = mu.atoms.min(axis=0) - 1e-12, mu.atoms.max(axis=0) + 1e-12
    ok = True
    for _ in range(200):
        state = localization.step(state, 1e-3, gen.normal(scale=math.sqrt(1e-3), size=2))
        w = state.weights
        ok &= abs(w.sum() - 1.0) < 1e-12 and bool(np.all(w >= 0))
        ok &= bool(np.all(state.a >= lo) and np.all(state.a <= hi))
        ok &= np.linalg.eigvalsh(state.A).min() > -1e-12
    return CheckResult("step-preserves-probability-and-psd", bool(ok), "200 steps on a 6-atom 2D measure")


def _check_trace_decay(seed: int) -> CheckResult:
    mu = DiscreteMeasure.two_point()
    _, rep = localization.batch_run(mu, localization.StoppingRule.fixed_horizon(1.0), path_count=400,
                                    seed=seed, sample_times=(1.0,), keep_traces=False)
    z = (rep.mean_trA[0] - math.exp(-1.0)) / rep.se_trA[0]
    return CheckResult("trace-decays-exponentially", abs(z) <= 4.0, f"z = {z:.2f} at t = 1")


def _check_gaussian_grid(seed: int) -> CheckResult:
    grid = discretize_density(lambda x: -0.5 * x[:, 0] ** 2, [(-6.0, 6.0)], 256)
    _, rep = localization.batch_run(grid, localization.StoppingRule.fixed_horizon(2.0), path_count=4,
                                    seed=seed, sample_times=(1.0, 2.0), t2=False, keep_traces=False)
    err = float(np.max(np.abs(rep.mean_trA / (rep.tr_A0 * np.exp(-rep.time_grid)) - 1.0)))
    return CheckResult("gaussian-covariance-closed-form", err < 0.02, f"max relative error {err:.2e}")


def _check_stopped(seed: int) -> CheckResult:
    rep = localization.stopped_run(DiscreteMeasure.two_point(), theta=0.5, path_count=200, seed=seed)
    M, QV = coupling.stopped_endpoints(rep)
    g = _rng.generator(seed, 903).standard_normal(M.shape)
    Y, Z = coupling.maurey_extend_batch(M, QV, g)
    sum_err = float(np.max(np.abs(Y + Z - 2 * M)))
    ok = rep.max_qv_ratio <= 1.0 + 1e-9 and sum_err <= 1e-12
    return CheckResult("stopped-qv-and-extension", bool(ok),
                       f"max QV/theta {rep.max_qv_ratio:.6f}, |Y+Z-2M| {sum_err:.1e}")


def _check_bl(seed: int) -> CheckResult:
    fam = DistributionFamily.truncated(2, Region("slab", half_width=1.0, axis=0))
    rep = coupling.brascamp_lieb_check(fam, N=20_000, seed=seed)
    return CheckResult("truncated-covariance-dominated", rep.passed, f"margin {rep.margin:.4f}")


def _check_sigma(seed: int) -> CheckResult:
    est = const.estimate_sigma(DistributionFamily.gaussian(2), N=20_000, seed=seed, resamples=50)
    truth = const.thin_shell_gaussian(2)
    ok = abs(est.variance - truth) <= 3 * est.ci_halfwidth
    return CheckResult("sigma-gaussian", ok, f"{est.variance:.4f} vs {truth:.4f}")


def _check_tau(seed: int) -> CheckResult:
    est = const.estimate_tau(DistributionFamily.exponential(2), N=100_000, seed=seed)
    return CheckResult("tau-exponential", abs(est.tau - 2.0) <= 0.2, f"tau = {est.tau:.3f}")


def _check_geometry(seed: int) -> CheckResult:
    n = 5
    M2 = geometry.mean_width_M(geometry.NormSpec.lp(n, 2), seed=seed).estimate
    Lc = geometry.isotropic_constant(geometry.isotropic_cube(n))
    Ld = geometry.isotropic_constant(geometry.isotropic_ball(2))
    pol = geometry.polar_gauge(geometry.polar_gauge(geometry.NormSpec.lp(n, 3)))
    ok = (M2 == 1.0 and abs(Lc - 1 / (2 * math.sqrt(3))) < 1e-14
          and abs(Ld - 1 / math.sqrt(4 * math.pi)) < 1e-14 and abs(pol.p - 3) < 1e-12)
    return CheckResult("geometry-identities", bool(ok), f"M(B2) {M2}, L_cube {Lc:.6f}, L_disc {Ld:.6f}")


def _check_determinism(seed: int) -> CheckResult:
    mu = DiscreteMeasure.two_point(weights=(0.3, 0.7))
    rule = localization.StoppingRule.fixed_horizon(0.5)
    previous = _rng.get_threads()
    outs = []
    try:
        for threads in (1, 4):
            _rng.set_threads(threads)
            _, rep = localization.batch_run(mu, rule, path_count=2100, seed=seed, sample_times=(0.5,),
                                            keep_traces=False)
            outs.append(rep.to_json())
    finally:
        _rng.set_threads(previous)
    return CheckResult("thread-count-invariance", outs[0] == outs[1], "2100 paths, 1 vs 4 threads")


CHECKS: list[Callable[[int], CheckResult]] = [
    _check_t2, _check_step_invariants, _check_trace_decay, _check_gaussian_grid, _check_stopped,
    _check_bl, _check_sigma, _check_tau, _check_geometry, _check_determinism,
]


def run_suite(seed: int = 0) -> list[CheckResult]:
    return [check(seed) for check in CHECKS]
