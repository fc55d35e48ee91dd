import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from thinshell.errors import CapabilityError, ConfigurationError, DegenerateMeasureError, InputError
from thinshell.measures import (DiscreteMeasure, DistributionFamily, GridMeasure, MomentSummary, Region,
                                discretize_density, family_from_name, isotropize, moments, sample,
                                sample_stream, t2_distance, third_moment_tensor, write_samples_csv)
from thinshell import rng


def test_two_point_moments():
    mom = moments(DiscreteMeasure.two_point())
    assert mom.mean[0] == 0.0 and mom.covariance[0, 0] == 1.0


def test_measure_validation():
    with pytest.raises(InputError):
        DiscreteMeasure(np.array([[0.0], [1.0]]), np.array([0.5, 0.6]))
    with pytest.raises(InputError):
        DiscreteMeasure(np.array([[0.0], [0.0]]), np.array([0.5, 0.5]))
    with pytest.raises(InputError):
        DiscreteMeasure(np.array([[0.0], [1.0]]), np.array([1.5, -0.5]))
    with pytest.raises(InputError):
        DiscreteMeasure(np.array([[np.nan], [1.0]]), np.array([0.5, 0.5]))


def test_from_samples_merges_duplicates():
    mu = DiscreteMeasure.from_samples([[0.0], [1.0], [0.0], [0.0]])
    assert mu.size == 2
    assert np.allclose(sorted(mu.weights), [0.25, 0.75])


def test_json_roundtrip():
    mu = DiscreteMeasure(np.array([[0.0, 1.0], [2.0, -1.0]]), np.array([0.25, 0.75]))
    doc = json.loads(json.dumps(mu.to_json()))
    assert set(doc) == {"dimension", "atoms", "weights"}
    back = DiscreteMeasure.from_json(doc)
    assert np.array_equal(back.atoms, mu.atoms) and np.array_equal(back.weights, mu.weights)


def test_arrays_read_only():
    mu = DiscreteMeasure.two_point()
    with pytest.raises(ValueError):
        mu.weights[0] = 1.0


def test_truncated_interval_variance_oracle():
    # closed form for N(0,1) restricted to [-1, 1]: 1 - 2 phi(1) / (2 Phi(1) - 1)
    truth = 1 - 2 * stats.norm.pdf(1) / (2 * stats.norm.cdf(1) - 1)
    assert truth == pytest.approx(0.2911251, abs=1e-7)
    fam = DistributionFamily.truncated(1, Region("box", half_width=1.0))
    x = sample_stream(fam, 100_000, rng.Stream(11, 0))
    assert np.all(np.abs(x) <= 1.0)
    se = np.std((x[:, 0] - x.mean()) ** 2, ddof=1) / math.sqrt(x.shape[0])
    assert abs(np.var(x, ddof=1) - truth) <= 4 * se


def test_grid_gaussian_covariance():
    grid = discretize_density(lambda x: -0.5 * x[:, 0] ** 2, [(-6.0, 6.0)], 512)
    mom = moments(grid)
    # midpoint rule on a smooth density: error O(h^2)
    assert mom.covariance[0, 0] == pytest.approx(1.0, abs=2e-4)
    assert grid.is_log_concave()


def test_grid_json_keys():
    grid = discretize_density(lambda x: -0.5 * x[:, 0] ** 2, [(-3.0, 3.0)], 16)
    doc = grid.to_json()
    assert {"dimension", "grid", "weights"} <= set(doc)
    back = GridMeasure.from_json(json.dumps(doc))
    assert np.allclose(back.weights, grid.weights)


def test_discretize_rejects_bad_density():
    with pytest.raises(InputError):
        discretize_density(lambda x: np.full(x.shape[0], np.nan), [(-1.0, 1.0)], 16)
    with pytest.raises(InputError):
        discretize_density(lambda x: -x[:, 0] ** 2, [(-1.0, 1.0)], 4)


def test_isotropize_gives_identity():
    gen = rng.generator(1, 0)
    mu = DiscreteMeasure.from_unnormalized(gen.normal(size=(9, 3)), gen.random(9) + 0.1)
    mom = moments(isotropize(mu))
    assert np.allclose(mom.mean, 0, atol=1e-12)
    assert np.allclose(mom.covariance, np.eye(3), atol=1e-10)


def test_isotropize_degenerate():
    mu = DiscreteMeasure(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([0.5, 0.5]))
    with pytest.raises(DegenerateMeasureError):
        isotropize(mu)


def test_third_moment_matches_einsum():
    gen = rng.generator(2, 0)
    x = gen.normal(size=(500, 3))
    T = third_moment_tensor(x, chunk=64)
    assert np.allclose(T, np.einsum("ki,kj,kl->ijl", x, x, x) / 500)


def test_sample_moments_order3():
    mom = moments(np.array([[0.0], [1.0], [5.0]]), order=3)
    assert isinstance(mom, MomentSummary)
    assert mom.covariance[0, 0] == pytest.approx(np.var([0, 1, 5], ddof=1))


def test_exponential_family_is_isotropic():
    x = sample(DistributionFamily.exponential(3), 200_000, rng.generator(3, 0))
    assert np.allclose(x.mean(axis=0), 0, atol=0.01)
    assert np.allclose(np.cov(x, rowvar=False), np.eye(3), atol=0.02)


@pytest.mark.parametrize("name", ["gaussian", "exp", "cube", "ball"])
def test_catalog_isotropic(name):
    x = sample(family_from_name(name, 4), 100_000, rng.generator(4, 0))
    assert np.allclose(np.cov(x, rowvar=False), np.eye(4), atol=0.03)


def test_ball_radius():
    x = sample(DistributionFamily.ball(3), 10_000, rng.generator(5, 0))
    assert np.linalg.norm(x, axis=1).max() <= math.sqrt(5) + 1e-12


def test_unknown_family():
    with pytest.raises(ConfigurationError):
        family_from_name("nope", 2)


def test_rare_truncation_capability():
    fam = DistributionFamily.truncated(1, Region("half-space", axis=0, offset=6.0))
    with pytest.raises(CapabilityError):
        sample(fam, 1000, rng.generator(6, 0))


def test_samples_csv_header():
    text = write_samples_csv(np.zeros((2, 3)))
    assert text.splitlines()[0] == "x1,x2,x3"


def test_sample_stream_chunk_invariant():
    fam = DistributionFamily.gaussian(2)
    a = sample_stream(fam, 1000, rng.Stream(9, 1))
    b = sample_stream(fam, 1000, rng.Stream(9, 1))
    assert np.array_equal(a, b)


# ---------------------------------------------------------------- transport


def _brute_force_t2(mu, nu):
    """Enumerate the vertices of the transport polytope for tiny uniform measures:
    with equal sizes and uniform weights an optimal plan is a permutation."""
    m = mu.size
    cost = ((mu.atoms[:, None, :] - nu.atoms[None, :, :]) ** 2).sum(-1)
    return min(cost[range(m), perm].mean() for perm in itertools.permutations(range(m)))


def test_t2_brute_force_2d():
    gen = rng.generator(7, 0)
    for _ in range(5):
        mu = DiscreteMeasure(gen.normal(size=(5, 2)), np.full(5, 0.2))
        nu = DiscreteMeasure(gen.normal(size=(5, 2)), np.full(5, 0.2))
        assert t2_distance(mu, nu) == pytest.approx(_brute_force_t2(mu, nu), abs=1e-9)


def test_t2_point_masses():
    assert t2_distance(DiscreteMeasure.point_mass([0.0, 0.0]),
                       DiscreteMeasure.point_mass([3.0, 4.0])) == pytest.approx(25.0)


def test_t2_capability_limit():
    a = DiscreteMeasure(np.arange(200.0)[:, None], np.full(200, 1 / 200))
    with pytest.raises(CapabilityError, match="subsample"):
        t2_distance(a, a)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6, unique=True),
       st.lists(st.floats(-5, 5), min_size=2, max_size=6, unique=True),
       st.integers(0, 2**31))
def test_t2_quantile_oracle(xs, ys, seed):
    from conftest import quantile_t2

    gen = rng.generator(seed, 0)
    p = gen.random(len(xs)) + 0.05
    q = gen.random(len(ys)) + 0.05
    mu = DiscreteMeasure.from_unnormalized(np.array(xs)[:, None], p)
    nu = DiscreteMeasure.from_unnormalized(np.array(ys)[:, None], q)
    oracle = quantile_t2(mu.atoms[:, 0], mu.weights, nu.atoms[:, 0], nu.weights)
    assert t2_distance(mu, nu) == pytest.approx(oracle, abs=1e-7, rel=1e-7)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(2, 6), st.integers(0, 2**31))
def test_t2_symmetric_and_zero_on_diagonal(n, m, seed):
    gen = rng.generator(seed, 0)
    mu = DiscreteMeasure.from_unnormalized(gen.normal(size=(m, n)), gen.random(m) + 0.05)
    nu = DiscreteMeasure.from_unnormalized(gen.normal(size=(m + 1, n)), gen.random(m + 1) + 0.05)
    assert t2_distance(mu, mu) == pytest.approx(0.0, abs=1e-9)
    assert t2_distance(mu, nu) == pytest.approx(t2_distance(nu, mu), abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 8), st.integers(0, 2**31))
def test_moments_psd_property(n, m, seed):
    gen = rng.generator(seed, 0)
    mu = DiscreteMeasure.from_unnormalized(gen.normal(size=(m, n)), gen.random(m) + 0.01)
    mom = moments(mu, order=3)
    assert np.linalg.eigvalsh(mom.covariance).min() > -1e-12
    assert np.allclose(mom.third, mom.third.transpose(1, 0, 2))
