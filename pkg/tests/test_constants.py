import math

import numpy as np
import pytest
from scipy import special

from thinshell import constants as K
from thinshell import geometry as G
from thinshell.errors import CapabilityError, InputError, PreconditionError
from thinshell.measures import DiscreteMeasure, DistributionFamily


def _gaussian_var_norm(n):
    return n - 2 * math.exp(2 * (special.gammaln((n + 1) / 2) - special.gammaln(n / 2)))


@pytest.mark.parametrize("n", [1, 2, 8, 100])
def test_thin_shell_gaussian_closed_form(n):
    assert K.thin_shell_gaussian(n) == pytest.approx(_gaussian_var_norm(n), rel=1e-12)


def test_thin_shell_limit():
    assert K.thin_shell_gaussian(2000) == pytest.approx(0.5, abs=1e-3)


def test_power_iteration_matches_eigh():
    gen = np.random.default_rng(0)
    A = gen.normal(size=(6, 6))
    M = A @ A.T
    lam, v = K.power_iteration(M)
    assert lam == pytest.approx(np.linalg.eigvalsh(M)[-1], rel=1e-10)
    assert np.linalg.norm(M @ v - lam * v) < 1e-5 * lam


def test_tau_exact_exponential_tensor():
    # diagonal tensor with entries 2 (third central moment of Exp(1)): tau^2 = 4
    n = 4
    T = np.zeros((n, n, n))
    for i in range(n):
        T[i, i, i] = 2.0
    lam, _ = K._tau_from_tensor(T)
    assert lam == pytest.approx(4.0)


def test_tau_of_exact_two_point_measure():
    # skewed Bernoulli standardized: E X^3 = (1 - 2p) / sqrt(p (1 - p))
    p = 0.2
    atoms = np.array([[-p], [1 - p]]) / math.sqrt(p * (1 - p))
    w = np.array([1 - p, p])
    from thinshell.measures import third_moment_tensor

    T = third_moment_tensor(atoms, w)
    lam, _ = K._tau_from_tensor(T)
    assert math.sqrt(lam) == pytest.approx(abs(1 - 2 * p) / math.sqrt(p * (1 - p)))


def test_tau_gaussian_small():
    est = K.estimate_tau(DistributionFamily.gaussian(3), N=200_000, seed=1)
    assert est.tau < 0.05
    assert est.standard_error > 0


def test_tau_exponential():
    est = K.estimate_tau(DistributionFamily.exponential(2), N=200_000, seed=2)
    assert est.tau == pytest.approx(2.0, rel=0.1)
    assert set(est.to_json()) >= {"estimate", "CI", "N", "seed"}


def test_tau_requires_isotropic():
    fam = DistributionFamily.discrete(DiscreteMeasure.two_point(weights=(0.3, 0.7)))
    with pytest.raises(PreconditionError):
        K.estimate_tau(fam, N=20_000)


def test_tau_sample_floor():
    with pytest.raises(InputError):
        K.estimate_tau(DistributionFamily.gaussian(2), N=100)


def test_sigma_gaussian():
    est = K.estimate_sigma(DistributionFamily.gaussian(2), N=50_000, seed=3)
    assert abs(est.variance - _gaussian_var_norm(2)) <= 3 * est.ci_halfwidth
    assert est.ci_low < est.variance < est.ci_high


def test_tau_bound_from_sigma():
    s = np.arange(1, 11) ** (1 / 3)
    direct = math.sqrt(sum(k ** (2 / 3) / k for k in range(1, 11)))
    assert K.tau_bound_from_sigma(s) == pytest.approx(direct)
    assert K.tau_bound_from_sigma([1.0] * 4, constant=2) == pytest.approx(2 * math.sqrt(1 + 1 / 2 + 1 / 3 + 1 / 4))
    with pytest.raises(InputError):
        K.tau_bound_from_sigma([])


def test_restricted_expectation_rare_event():
    fam = DistributionFamily.gaussian(2)
    with pytest.raises(CapabilityError):
        K.restricted_norm_expectation(fam, G.NormSpec.lp(2, 2), K.Event("norm-exceeds", 8.0), N=20_000)


def test_restricted_expectation_infinite_radius():
    rep = K.restricted_norm_expectation(DistributionFamily.gaussian(2), G.NormSpec.lp(2, 1),
                                        K.Event("coordinate-exceeds", math.inf), N=20_000)
    assert rep.ratio == 0.0


def test_restricted_expectation_whole_space():
    # F = everything gives ratio exactly 1
    rep = K.restricted_norm_expectation(DistributionFamily.gaussian(3), G.NormSpec.lp(3, 2),
                                        K.Event("norm-exceeds", -1.0), N=20_000)
    assert rep.ratio == pytest.approx(1.0, abs=1e-12)


def test_tau_from_samples_matches_family_estimator():
    from thinshell import rng
    from thinshell.measures import sample

    fam = DistributionFamily.exponential(3)
    x = sample(fam, 20_000, rng.Stream(4, 0).generator(0))
    a = K.tau_from_samples(x)
    b = K.estimate_tau(fam, N=20_000, seed=4, chunk=1 << 15)
    assert a.tau == pytest.approx(b.tau, rel=1e-10)
