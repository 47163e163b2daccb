import numpy as np
import pytest

from crowdsteer.errors import MassMismatch, SizeCap, ZeroMass
from crowdsteer.measure import Measure
from crowdsteer.wasserstein import (
    DistanceParams,
    distance,
    equalize,
    rescaled_distance,
    w1,
    w1_1d,
    wp_assignment,
    wp_quantile_1d,
)
from oracles import brute_force_wp, cdf_l1, lp_wp, uniform_cdf


def _density(lo, hi, value):
    return Measure(np.array([[0.5 * (lo + hi)]]), [value * (hi - lo)], ((lo, hi, value),))


def test_identical_measures(rng):
    mu = Measure.point_cloud(rng.normal(size=50))
    assert w1_1d(mu, mu) == 0.0


def test_unit_translation_exact():
    assert w1_1d(_density(0.0, 1.0, 1.0), _density(1.0, 2.0, 1.0)) == pytest.approx(1.0, abs=1e-14)


def test_block_versus_spread_block():
    mu, nu = _density(0.0, 1.0, 1.0), _density(0.0, 2.0, 0.5)
    oracle = cdf_l1(uniform_cdf(0, 1), uniform_cdf(0, 2), -1.0, 3.0)
    assert oracle == pytest.approx(0.5, abs=1e-8)
    assert w1_1d(mu, nu) == pytest.approx(0.5, abs=1e-14)


def test_particles_against_density():
    N = 1000
    x = (np.arange(N) + 0.5) / N
    mu = Measure.point_cloud(x)
    # midpoint quantiles of U[0, 1]: each particle is 1/(4N) from its cell mass on average
    assert w1_1d(mu, _density(0.0, 1.0, 1.0)) == pytest.approx(1.0 / (4 * N), rel=1e-9)


def test_mass_mismatch():
    with pytest.raises(MassMismatch):
        w1_1d(Measure.point_cloud([0.0]), Measure([[0.0]], [0.5]))


def test_point_clouds_assignment():
    a, b = Measure.point_cloud([[0.0, 0.0]]), Measure.point_cloud([[1.0, 0.0]])
    assert wp_assignment(a, b) == 1.0
    c = Measure.point_cloud(np.random.default_rng(1).normal(size=(20, 2)))
    assert wp_assignment(c, c) == 0.0


def test_assignment_matches_brute_force_in_2d():
    r = np.random.default_rng(2)
    for p in (1.0, 2.0):
        x, y = r.normal(size=(7, 2)), r.normal(size=(7, 2))
        got = wp_assignment(Measure.point_cloud(x), Measure.point_cloud(y), DistanceParams(p=p))
        assert got == pytest.approx(brute_force_wp(x, y, p), rel=1e-12)


def test_quantile_wp_matches_lp_for_weighted_clouds():
    r = np.random.default_rng(3)
    for p in (1.0, 2.0, 3.0):
        x, y = r.normal(size=6), r.normal(size=4) + 1.0
        a, b = r.dirichlet(np.ones(6)), r.dirichlet(np.ones(4))
        got = wp_quantile_1d(Measure(x, a), Measure(y, b), p)
        assert got == pytest.approx(lp_wp(x, a, y, b, p), rel=1e-7)


def test_size_cap():
    mu = Measure.point_cloud(np.zeros((30, 2)))
    with pytest.raises(SizeCap):
        wp_assignment(mu, mu, DistanceParams(cap=10))


def test_equalize_resamples_with_fixed_seed():
    mu = Measure.point_cloud(np.arange(5.0))
    nu = Measure.point_cloud(np.arange(3.0))
    a1, b1 = equalize(mu, nu, seed=4)
    a2, b2 = equalize(mu, nu, seed=4)
    assert a1.size == b1.size == 5
    np.testing.assert_array_equal(a1.positions, a2.positions)
    np.testing.assert_array_equal(b1.positions, b2.positions)


def test_rescaled_on_probabilities_is_plain():
    r = np.random.default_rng(5)
    mu, nu = Measure.point_cloud(r.normal(size=(9, 2))), Measure.point_cloud(r.normal(size=(9, 2)))
    params = DistanceParams(p=2.0)
    assert rescaled_distance(mu, nu, params) == pytest.approx(distance(mu, nu, params), rel=1e-12)


def test_rescaled_quarter_mass_translation():
    x = np.random.default_rng(6).uniform(size=(8, 1))
    mu, nu = Measure(x, np.full(8, 0.25 / 8)), Measure(x + 1.0, np.full(8, 0.25 / 8))
    assert rescaled_distance(mu, nu, DistanceParams(p=1.0)) == pytest.approx(0.25, rel=1e-12)


def test_rescaled_mass_four_p_two():
    r = np.random.default_rng(7)
    x, y = r.normal(size=(6, 2)), r.normal(size=(6, 2))
    params = DistanceParams(p=2.0)
    D = wp_assignment(Measure.point_cloud(x), Measure.point_cloud(y), params)
    big = rescaled_distance(Measure(x, np.full(6, 4 / 6)), Measure(y, np.full(6, 4 / 6)), params)
    assert big == pytest.approx(2.0 * D, rel=1e-12)


def test_rescaled_errors():
    mu = Measure.point_cloud([0.0])
    with pytest.raises(ZeroMass):
        rescaled_distance(Measure([[0.0]], [0.0]), Measure([[1.0]], [0.0]))
    with pytest.raises(MassMismatch):
        rescaled_distance(mu, Measure([[1.0]], [2.0]))


def test_w1_dispatch():
    mu, nu = Measure.point_cloud([0.0, 1.0]), Measure.point_cloud([2.0, 3.0])
    assert w1(mu, nu) == pytest.approx(2.0)
    a, b = Measure.point_cloud([[0.0, 0.0], [1.0, 0.0]]), Measure.point_cloud([[0.0, 1.0], [1.0, 1.0]])
    assert w1(a, b) == pytest.approx(1.0)
