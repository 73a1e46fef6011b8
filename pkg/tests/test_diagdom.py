import math

import numpy as np
import pytest

from uproc.diagdom import (DirichletFamily, HaarFamily, check_functional_extras,
                           check_partition_conditions, dirichlet_kernel,
                           haar_basis_kernel, haar_kernel, run_diag_fclt,
                           simpson_refine, simulate_diag_paths)
from uproc.rng import RngStream
from uproc.spaces import cube_uniform, sample


def test_simpson_refine_polynomial():
    assert simpson_refine(lambda x: x**3, 0, 2, min_panels=8) == pytest.approx(4.0)


def test_simpson_refine_oscillatory():
    k = 200
    val = simpson_refine(lambda x: np.sin(k * x) ** 2, 0, 2 * np.pi,
                         min_panels=4096)
    assert val == pytest.approx(np.pi, rel=1e-8)


# -- Dirichlet kernel -------------------------------------------------------------


def test_dirichlet_diagonal_value():
    k = 7
    kern = dirichlet_kernel(k)
    x = np.array([0.3, -1.2])
    assert np.allclose(kern(x, x), (2 * k + 1) / (2 * np.pi))


def test_dirichlet_symmetry():
    kern = dirichlet_kernel(5)
    gen = RngStream(1).generator()
    x, y = gen.uniform(-np.pi, np.pi, (2, 64))
    assert np.allclose(kern(x, y), kern(y, x))


def test_dirichlet_matches_spectral_sum():
    # closed form vs the truncated exponential-basis expansion
    k = 6
    kern = dirichlet_kernel(k)
    gen = RngStream(2).generator()
    x, y = gen.uniform(-np.pi, np.pi, (2, 32))
    direct = np.zeros(32, dtype=complex)
    for j in range(-k, k + 1):
        direct += np.exp(1j * j * x) * np.conj(np.exp(1j * j * y)) / (2 * np.pi)
    assert np.allclose(kern(x, y), direct.real, atol=1e-10)


def test_dirichlet_kn_two_ways():
    fam = DirichletFamily()
    for n in (16, 32):
        spectral = fam.k_n(n)
        quad = fam.k_n_quadrature(n)
        assert quad == pytest.approx(spectral, rel=1e-6)


def test_dirichlet_projection_idempotent():
    # integral of K(x,z) K(z,y) dmu(z) recovers K(x,y) / (2 pi) factors:
    # under the uniform law the operator has eigenvalue 1/(2 pi) on its range
    fam = DirichletFamily()
    kern = fam.kernel(4)
    gen = RngStream(3).generator()
    xs = gen.uniform(-np.pi, np.pi, 4)
    for x in xs:
        def f(z):
            return kern(np.full_like(z, x), z) * kern(z, np.full_like(z, 0.4))
        val = simpson_refine(f, -np.pi, np.pi, min_panels=8192) / (2 * np.pi)
        expect = kern(np.array([x]), np.array([0.4]))[0] / (2 * np.pi)
        assert val == pytest.approx(expect, rel=1e-6, abs=1e-9)


# -- Haar kernel --------------------------------------------------------------------


def test_haar_same_cell_value():
    kern = haar_kernel(3)
    assert kern(np.array([0.1]), np.array([0.24]))[0] == 0.0  # cells 0 and 1
    assert kern(np.array([0.26]), np.array([0.3]))[0] == 8.0  # both cell 2
    assert kern(np.array([1.0]), np.array([0.999]))[0] == 8.0  # clipped edge


def test_haar_matches_basis_summation():
    kern = haar_kernel(4)
    oracle = haar_basis_kernel(4)
    gen = RngStream(4).generator()
    x, y = gen.random((2, 128))
    assert np.allclose(kern(x, y), oracle(x, y), atol=1e-10)


def test_haar_reproduces_constants():
    # integral of K(x, y) dy = 1 for every x; Simpson converges slowly
    # across the jump points, hence the looser tolerance
    kern = haar_kernel(5)
    for x in (0.03, 0.5, 0.97):
        val = simpson_refine(lambda z, x=x: kern(np.full_like(z, x), z), 0, 1,
                             min_panels=2**12)
        assert val == pytest.approx(1.0, abs=1e-4)


def test_haar_idempotent():
    kern = haar_kernel(4)
    gen = RngStream(5).generator()
    for _ in range(4):
        x, y = gen.random(2)
        def f(z):
            return kern(np.full_like(z, x), z) * kern(z, np.full_like(z, y))
        val = simpson_refine(f, 0, 1, min_panels=2**12)
        assert val == pytest.approx(kern(np.array([x]), np.array([y]))[0],
                                    rel=1e-6, abs=1e-9)


def test_haar_kn_is_cell_count():
    fam = HaarFamily()
    n = 64
    assert fam.k_n(n) == pytest.approx(2 ** fam.param(n))


# -- condition suites ------------------------------------------------------------------


def test_dirichlet_partition_conditions_trend():
    fam = DirichletFamily()
    rep = check_partition_conditions(fam, [64, 128, 256])
    assert rep.verdicts["all"], rep.verdicts
    assert rep.series["sigma_ratio"][-1] == pytest.approx(1.0, abs=0.05)
    # within-block sums approach 1 from below
    s = rep.series["sum_within_over_kn"]
    assert s[-1] > s[0] and s[-1] <= 1.0 + 1e-9


def test_dirichlet_op_norm_constant():
    fam = DirichletFamily()
    rep = check_partition_conditions(fam, [32, 64])
    assert rep.op_norms["exact"] == pytest.approx(1 / (2 * np.pi))
    assert rep.verdicts["op_norm_matches"]


def test_haar_partition_conditions():
    # dyadic rounding of the resolution keeps some ratios flat on short
    # geometric grids; the wider grid exposes the decay
    fam = HaarFamily()
    rep = check_partition_conditions(fam, [64, 256, 4096])
    assert rep.verdicts["all"], rep.verdicts
    assert np.allclose(rep.series["sum_within_over_kn"], 1.0)  # exact for blocks
    assert rep.op_norms["exact"] == pytest.approx(1.0)


def test_haar_perturbed_density_conditions():
    dens = lambda x: 1.0 + 0.4 * np.sin(2 * np.pi * np.asarray(x))
    fam = HaarFamily(density=dens, density_bounds=(0.6, 1.4))
    rep = check_partition_conditions(fam, [64, 128])
    assert rep.verdicts["within_sums_to_one"]
    assert rep.verdicts["op_norm_matches"]


def test_functional_extras_pass_for_good_window():
    fam = DirichletFamily()
    rep = check_functional_extras(fam, [64, 128, 256])
    assert rep.verdicts["all"], rep.verdicts


def test_functional_extras_fail_for_slow_kn():
    # k_n = n log n fails the polynomial-gap requirement for every alpha1 > 0
    class SlowFamily(DirichletFamily):
        def param(self, n):
            return math.ceil(n * math.log2(n))

    rep = check_functional_extras(SlowFamily(), [64, 256, 1024, 4096],
                                  alpha1=0.25)
    assert not rep.verdicts["alpha1_bounded"]


def test_offdiag_variance_share_vanishes():
    # the off-block remainder carries a vanishing share of the variance
    fam = DirichletFamily()
    shares = [fam.offdiag_variance_share(n) for n in (32, 64, 128)]
    assert shares[-1] < 0.15
    assert shares[-1] < shares[0]
    assert HaarFamily().offdiag_variance_share(64) == 0.0


def test_dirichlet_offdiag_tail_bound():
    # (1/k_n) int_{|x-y|>eps} K^2 <= c (eps + 1/(eps^2 k_n))
    fam = DirichletFamily()
    for n in (32, 64):
        kn = fam.k_n(n)
        for eps in (0.05, 0.2):
            tail = fam.offdiag_tail(n, eps)
            assert tail <= 3.0 * (eps + 1.0 / (eps**2 * kn))


# -- simulation ---------------------------------------------------------------------


def test_diag_paths_variance_normalised():
    fam = DirichletFamily()
    w = simulate_diag_paths(fam, 64, 400, np.array([0.5, 1.0]), RngStream(6))
    v = float(np.mean(w[:, -1] ** 2))
    assert v == pytest.approx(1.0, abs=0.3)


def test_run_diag_fclt_small():
    fam = DirichletFamily()
    res = run_diag_fclt(fam, 128, 300, RngStream(7))
    assert res.cov_dev["max_abs_dev"] < 0.25  # loose at this scale
    assert res.ks_marginal[1] > 0.001
    assert res.increment_fit.exponent > 1.0
