import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from thinshell import geometry as G
from thinshell import rng
from thinshell.errors import CapabilityError, ConfigurationError, InputError
from thinshell.measures import DistributionFamily

vectors = st.lists(st.floats(-10, 10), min_size=3, max_size=3).map(np.array)


def test_cube_facet_gauge_is_linf():
    spec = G.NormSpec.polytope_facets(G.cube_facets(3))
    x = rng.generator(0, 0).normal(size=(50, 3))
    assert np.allclose(spec(x), np.abs(x).max(axis=1))


def test_cross_vertex_gauge_is_l1():
    spec = G.NormSpec.polytope_vertices(G.cross_polytope_vertices(3))
    x = rng.generator(1, 0).normal(size=(20, 3))
    assert np.allclose(spec(x), np.abs(x).sum(axis=1), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(vectors, vectors, st.sampled_from([1.0, 1.5, 2.0, 3.0, math.inf]))
def test_lp_triangle_and_duality(x, y, p):
    spec = G.NormSpec.lp(3, p)
    dual = G.polar_gauge(spec)
    assert spec(x + y) <= spec(x) + spec(y) + 1e-9
    # Hoelder: <x, y> <= ||x|| ||y||_*
    assert x @ y <= spec(x) * dual(y) + 1e-9
    assert spec(2.5 * x) == pytest.approx(2.5 * spec(x))


@settings(max_examples=30, deadline=None)
@given(vectors)
def test_polar_of_linear_map(x):
    L = np.array([[2.0, 0.3, 0.0], [0.0, 1.0, -0.4], [0.1, 0.0, 0.5]])
    spec = G.NormSpec.linear(L)
    pol = G.polar_gauge(spec)
    # the dual of |L x| is |L^{-T} y|
    assert pol(x) == pytest.approx(np.linalg.norm(np.linalg.solve(L.T, x)), rel=1e-9, abs=1e-12)


def test_polar_roundtrip():
    spec = G.NormSpec.weighted([1.0, 2.0, 0.5], 3.0)
    back = G.polar_gauge(G.polar_gauge(spec))
    assert np.allclose(back.scale, spec.scale) and back.p == pytest.approx(3.0)
    fac = G.NormSpec.polytope_facets(G.cube_facets(2))
    assert G.polar_gauge(fac).kind == "polytope-vertices"


def test_polytope_limit_and_validation():
    with pytest.raises(CapabilityError):
        G.NormSpec.polytope_facets(np.vstack([np.eye(2)] * 70))
    with pytest.raises(ConfigurationError):
        G.NormSpec.polytope_facets(np.array([[1.0, 0.0], [2.0, 0.0]]))
    with pytest.raises(InputError):
        G.NormSpec.lp(2, 1)([1.0, 2.0, 3.0])


def test_chi_mean_matches_scipy():
    for n in (1, 2, 10, 500, 1000):
        assert G.chi_mean(n) == pytest.approx(stats.chi(n).mean(), rel=1e-10)
    assert G.chi_mean(10) == pytest.approx(3.0843, abs=1e-4)


def test_max_abs_mean_oracle():
    # independent oracle: integrate the density of max |G_i|
    n = 50
    pdf = lambda t: n * 2 * stats.norm.pdf(t) * (2 * stats.norm.cdf(t) - 1) ** (n - 1)
    oracle, _ = integrate.quad(lambda t: t * pdf(t), 0, 20, limit=200)
    assert G.gaussian_max_abs_mean(n) == pytest.approx(oracle, rel=1e-8)


def test_gaussian_l1_monte_carlo():
    for n in (2, 10):
        rep = G.gaussian_norm_expectation(G.NormSpec.lp(n, 1), N=100_000, seed=1)
        assert rep.estimate == pytest.approx(n * math.sqrt(2 / math.pi), rel=0.01)


def test_gaussian_closed_form_is_exact():
    rep = G.gaussian_norm_expectation(G.NormSpec.lp(7, 2))
    assert rep.standard_error == 0.0 and rep.method == "closed-form"


def test_mean_width_ball_is_one():
    assert G.mean_width_M(G.NormSpec.lp(6, 2)).estimate == 1.0


@pytest.mark.parametrize("p", [1.0, math.inf])
def test_polar_integration_identity(p):
    n = 10
    spec = G.NormSpec.lp(n, p)
    M = G.mean_width_M(spec, N=100_000, seed=2, stream=0)
    E = G.gaussian_norm_expectation(spec, N=100_000, seed=2, stream=1)
    cn = G.chi_mean(n)
    assert abs(M.estimate * cn - E.estimate) <= 2 * math.hypot(cn * M.standard_error, E.standard_error)


def test_mstar_cube_closed_form():
    n = 10
    Ms = G.mean_width_Mstar(G.NormSpec.lp(n, math.inf), N=100_000, seed=3)
    truth = n * math.sqrt(2 / math.pi) / G.chi_mean(n)
    assert abs(Ms.estimate - truth) <= 4 * Ms.standard_error


def test_isotropic_constants_exact():
    assert G.isotropic_constant(G.isotropic_cube(5)) == pytest.approx(1 / (2 * math.sqrt(3)), rel=1e-14)
    assert G.isotropic_constant(G.isotropic_ball(2)) == pytest.approx((4 * math.pi) ** -0.5, rel=1e-14)
    # ball volume vs scipy oracle
    n = 7
    r = math.sqrt(n + 2)
    vol = math.pi ** (n / 2) / special.gamma(n / 2 + 1) * r**n
    assert G.isotropic_ball(n).volume == pytest.approx(vol, rel=1e-12)


def test_compare_gaussian_ratio():
    rep = G.compare_norms_experiment(DistributionFamily.gaussian(10), G.NormSpec.lp(10, 1), N=50_000, seed=4)
    assert abs(rep.ratio - 1) <= 3 * rep.ratio_se


def test_corollary_cube_ball_n3():
    # E||X||_K = n/(n+1) for both bodies; E||X||_{K°} = n(n+2)/(n+1) for the ball
    for body in (G.isotropic_cube(3), G.isotropic_ball(3)):
        rep = G.corollary_checks(body, N=50_000, seed=5, tau=2.0)
        assert rep.gauge_step_holds and rep.polar_step_holds
        assert rep.E_gauge.estimate == pytest.approx(0.75, abs=5 * rep.E_gauge.standard_error)
    rep = G.corollary_checks(G.isotropic_ball(3), N=50_000, seed=5, tau=2.0)
    assert rep.E_polar_gauge.estimate == pytest.approx(3.75, abs=5 * rep.E_polar_gauge.standard_error)
