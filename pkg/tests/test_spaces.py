import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uproc.rng import RngStream
from uproc.spaces import (circle_dist, circle_uniform, cube_uniform,
                          euclidean_density, exact_expect, finite, sample,
                          uniform_atoms)


def test_sample_empty():
    sp = finite([0.0, 1.0], [0.5, 0.5])
    assert len(sample(sp, 0, RngStream(1))) == 0


def test_sample_point_mass():
    sp = finite([7.0], [1.0])
    assert np.all(sample(sp, 3, RngStream(1)) == 7.0)


def test_cube_uniform_mean():
    # empirical mean of the first coordinate within 3 sd/sqrt(N) of 1/2
    n = 10**5
    pts = sample(cube_uniform(2), n, RngStream(123))
    tol = 3 * (1 / np.sqrt(12)) / np.sqrt(n)
    assert abs(pts[:, 0].mean() - 0.5) < tol


def test_sampling_determinism():
    sp = cube_uniform(3)
    a = sample(sp, 50, RngStream(9, 4))
    b = sample(sp, 50, RngStream(9, 4))
    c = sample(sp, 50, RngStream(9, 5))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_streams_independent():
    g1 = RngStream(5, 1).generator()
    g2 = RngStream(5, 2).generator()
    x, y = g1.random(20000), g2.random(20000)
    r = np.corrcoef(x, y)[0, 1]
    assert abs(r) < 4 / np.sqrt(20000)


def test_finite_lln():
    w = np.array([0.1, 0.2, 0.3, 0.4])
    sp = finite(np.arange(4.0), w)
    n = 10**5
    draws = sample(sp, n, RngStream(2))
    freq = np.bincount(draws.astype(int), minlength=4) / n
    se = np.sqrt(w * (1 - w) / n)
    assert np.all(np.abs(freq - w) < 4 * se)


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        finite([0.0, 1.0], [0.5, 0.6])
    with pytest.raises(ValueError):
        finite([0.0, 1.0], [1.5, -0.5])


def test_circle_dist():
    assert circle_dist(0.1, 0.9) == pytest.approx(0.2)
    assert circle_dist(0.0, 0.5) == pytest.approx(0.5)
    sp = circle_uniform()
    pts = sample(sp, 1000, RngStream(3))
    assert pts.min() >= 0 and pts.max() < 1


def test_rejection_sampling_triangle_density():
    # f(x) = 2x on [0,1]; mean 2/3
    sp = euclidean_density(lambda x: 2 * np.asarray(x).reshape(-1), [[0, 1]], 2.0)
    pts = sample(sp, 40000, RngStream(11))
    assert abs(pts.mean() - 2 / 3) < 4 * 0.24 / np.sqrt(40000)


def test_rejection_envelope_violation_names_point():
    sp = euclidean_density(lambda x: 2 * np.asarray(x).reshape(-1), [[0, 1]], 1.0)
    with pytest.raises(RuntimeError, match="envelope"):
        sample(sp, 100, RngStream(12))


# -- exact_expect ----------------------------------------------------------


def test_exact_expect_total_mass():
    sp = finite([1.0, 2.0, 3.0], [0.2, 0.3, 0.5])
    assert exact_expect(sp, lambda x, y: np.ones_like(x), 2) == pytest.approx(1.0)


def test_exact_expect_symmetry():
    sp = finite([-1.0, 1.0], [0.5, 0.5])
    assert exact_expect(sp, lambda x: x, 1) == pytest.approx(0.0)


def test_exact_expect_product():
    sp = finite([0.0, 1.0], [0.5, 0.5])
    assert exact_expect(sp, lambda x, y: x * y, 2) == pytest.approx(0.25)


def test_exact_expect_point_mass():
    sp = finite([3.0], [1.0])
    assert exact_expect(sp, lambda x, y, z: x * y * z, 3) == pytest.approx(27.0)


def test_exact_expect_budget_guard():
    sp = finite(np.arange(40.0), np.full(40, 1 / 40))
    with pytest.raises(ValueError, match="budget"):
        exact_expect(sp, lambda *xs: xs[0], 5)


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(0.05, 0.95))
def test_exact_expect_multilinear(a, b, w0):
    sp = finite([0.0, 1.0], [w0, 1 - w0])
    f = lambda x, y: x * y
    g = lambda x, y: x + y
    lhs = exact_expect(sp, lambda x, y: a * f(x, y) + b * g(x, y), 2)
    rhs = a * exact_expect(sp, f, 2) + b * exact_expect(sp, g, 2)
    assert lhs == pytest.approx(rhs, abs=1e-12)
