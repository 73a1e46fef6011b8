import math

import numpy as np
import pytest

from uproc.limits import (IncrementFit, LimitSpec, a_process_cov, bridge_cov,
                          bridge_max_cdf, empirical_cov, gamma_cov,
                          increment_moment_diag, kolmogorov_cdf,
                          max_cov_deviation, ks_statistic, ks_test, psi_cov,
                          simulate_gaussian)
from uproc.rng import RngStream


# -- closed-form covariances ---------------------------------------------------


def test_gamma_cov_degenerate_p2():
    assert gamma_cov(2, [0.0, 1.0], 0.5, 1.0) == pytest.approx(0.25)


def test_gamma_cov_at_one():
    alpha = [0.3, 0.5, 0.2]
    assert gamma_cov(3, alpha, 1.0, 1.0) == pytest.approx(sum(alpha))


def test_gamma_cov_zero_time():
    assert gamma_cov(2, [1.0, 1.0], 0.0, 0.7) == 0.0


def test_gamma_cov_pure_min_power():
    s, t = 0.3, 0.8
    assert gamma_cov(3, [0, 0, 1.0], s, t) == pytest.approx(min(s, t) ** 3)


def test_a_cov_half():
    assert a_process_cov(0.5, 0.5) == pytest.approx(0.25)


def test_a_cov_endpoints():
    for t in (0.0, 0.3, 1.0):
        assert a_process_cov(0.0, t) == pytest.approx(0.0)
        assert a_process_cov(1.0, t) == pytest.approx(0.0)


def test_a_cov_time_reversal():
    gen = RngStream(1).generator()
    for _ in range(50):
        s, t = sorted(gen.random(2))
        assert a_process_cov(s, t) == pytest.approx(a_process_cov(1 - t, 1 - s))


def test_a_cov_matches_simulation():
    # construct (1-t)B(t) + t(B(1)-B(t)) from simulated Brownian paths
    gen = RngStream(2).generator()
    m, reps = 200, 20000
    dt = 1.0 / m
    incr = gen.standard_normal((reps, m)) * math.sqrt(dt)
    b = np.cumsum(incr, axis=1)
    grid = np.arange(1, m + 1) / m
    a = (1 - grid) * b + grid * (b[:, -1:] - b)
    for s, t in [(0.25, 0.5), (0.5, 0.75), (0.2, 0.9)]:
        i, j = int(s * m) - 1, int(t * m) - 1
        emp = float(np.mean(a[:, i] * a[:, j]))
        se = float(np.std(a[:, i] * a[:, j], ddof=1)) / math.sqrt(reps)
        assert abs(emp - a_process_cov(s, t)) < 3 * se + 1e-3


def test_bridge_cov_values():
    assert bridge_cov(0.5, 0.5) == pytest.approx(0.25)
    assert bridge_cov(0.0, 0.6) == 0.0
    assert bridge_cov(1.0, 0.6) == pytest.approx(0.0)


def test_bridge_cov_matches_construction():
    gen = RngStream(3).generator()
    m, reps = 200, 20000
    incr = gen.standard_normal((reps, m)) * math.sqrt(1.0 / m)
    b = np.cumsum(incr, axis=1)
    grid = np.arange(1, m + 1) / m
    br = b - grid * b[:, -1:]
    for s, t in [(0.3, 0.5), (0.5, 0.9)]:
        i, j = int(s * m) - 1, int(t * m) - 1
        emp = float(np.mean(br[:, i] * br[:, j]))
        se = float(np.std(br[:, i] * br[:, j], ddof=1)) / math.sqrt(reps)
        assert abs(emp - bridge_cov(s, t)) < 3 * se + 1e-3


def test_psi_cov_normalisation():
    assert psi_cov(1.0, [2.0, 3.0], 1.2, 2, 1.0, 1.0) == pytest.approx(1.0)
    assert psi_cov(1.0, [2.0, 3.0], 1.2, 2, 0.0, 0.5) == 0.0


def test_psi_cov_small_d2_reduces_to_dense_shape():
    s, t = 0.4, 0.9
    val = psi_cov(2.0, [5.0, 1e-12], 1.0, 2, s, t)
    assert val == pytest.approx(min(s, t) ** 2 * max(s, t), rel=1e-6)


def test_cov_functions_psd_on_random_grids():
    gen = RngStream(4).generator()
    specs = [LimitSpec("time_changed_bm", p=2),
             LimitSpec("general", p=3, alpha_sq=(0.2, 0.5, 0.3)),
             LimitSpec("changepoint_a"),
             LimitSpec("brownian_bridge"),
             LimitSpec("mixture", c1=2.0, c2=0.7)]
    for spec in specs:
        for _ in range(5):
            grid = np.sort(gen.random(12))
            cov = spec.cov_matrix(grid)
            assert np.allclose(cov, cov.T)
            assert np.linalg.eigvalsh(cov).min() > -1e-9


# -- simulation ----------------------------------------------------------------


def test_simulate_matches_target_cov():
    spec = LimitSpec("general", p=2, alpha_sq=(0.5, 0.5))
    grid = np.array([0.2, 0.4, 0.6, 0.8, 1.0])
    w = simulate_gaussian(spec, grid, 10000, RngStream(5))
    emp, se = empirical_cov(w)
    tgt = spec.cov_matrix(grid)
    assert np.all(np.abs(emp - tgt) < 4 * se + 1e-6)


def test_simulate_marginal_standard_normal():
    from scipy.stats import norm
    spec = LimitSpec("time_changed_bm", p=1)
    grid = np.array([0.5, 1.0])
    w = simulate_gaussian(spec, grid, 4000, RngStream(6))
    d, p = ks_test(w[:, -1], norm.cdf)
    assert p > 0.01


def test_simulate_deterministic_per_stream():
    spec = LimitSpec("brownian_bridge")
    grid = np.linspace(0.1, 0.9, 9)
    a = simulate_gaussian(spec, grid, 50, RngStream(7, 3))
    b = simulate_gaussian(spec, grid, 50, RngStream(7, 3))
    assert np.array_equal(a, b)


def test_simulate_rejects_indefinite():
    bad = lambda s, t: -np.ones(np.broadcast(s, t).shape)
    with pytest.raises(ValueError, match="eigenvalue"):
        simulate_gaussian(bad, np.array([0.2, 0.8]), 10, RngStream(8))


def test_scaled_bridge_max_matches_kolmogorov_quantiles():
    # max_t |c * bridge| / c follows the Kolmogorov law
    spec = LimitSpec("mixture", c1=0.0, c2=math.sqrt(2.0))
    grid = np.linspace(0.001, 0.999, 999)
    w = simulate_gaussian(spec, grid, 8000, RngStream(9))
    m = np.max(np.abs(w), axis=1) / math.sqrt(2.0)
    d = ks_statistic(m, kolmogorov_cdf)
    assert d < 0.05  # grid maximum slightly undershoots the true supremum


# -- Kolmogorov-Smirnov utilities ---------------------------------------------


def test_kolmogorov_cdf_limits():
    assert kolmogorov_cdf(0.0) == 0.0
    assert kolmogorov_cdf(-1.0) == 0.0
    assert kolmogorov_cdf(100.0) == pytest.approx(1.0)


def test_kolmogorov_cdf_median():
    assert kolmogorov_cdf(0.82757355) == pytest.approx(0.5, abs=1e-6)


def simulated_bridges(seed, m=4000, reps=20000, chunks=4):
    """Bridge paths on an m-point grid, generated in chunks to bound memory."""
    gen = RngStream(seed).generator()
    grid = np.arange(1, m + 1) / m
    for _ in range(chunks):
        incr = gen.standard_normal((reps // chunks, m)) * math.sqrt(1.0 / m)
        b = np.cumsum(incr, axis=1)
        yield b - grid * b[:, -1:]


def test_kolmogorov_median_matches_bridge_sup_simulation():
    # the grid maximum slightly undershoots the supremum, so the empirical
    # CDF sits a little above the limit; 0.025 covers bias plus noise
    below = total = 0
    for br in simulated_bridges(10):
        sup = np.max(np.abs(br), axis=1)
        below += int(np.sum(sup <= 0.82757355))
        total += len(sup)
    assert abs(below / total - 0.5) < 0.025


def test_bridge_max_cdf_against_simulation():
    # one-sided maximum of a bridge: P(max > x) = exp(-2 x^2)
    counts = {0.3: 0, 0.6: 0, 1.0: 0}
    total = 0
    for br in simulated_bridges(11):
        mx = np.max(br, axis=1)
        for x in counts:
            counts[x] += int(np.sum(mx <= x))
        total += br.shape[0]
    for x, c in counts.items():
        assert abs(c / total - bridge_max_cdf(x)) < 0.025


def test_ks_null_case():
    from scipy.stats import norm
    gen = RngStream(12).generator()
    d, p = ks_test(gen.standard_normal(10000), norm.cdf)
    assert p > 0.01


def test_ks_constant_samples_reject():
    from scipy.stats import norm
    d, p = ks_test(np.zeros(500), norm.cdf)
    assert p < 1e-6


def test_ks_matches_scipy():
    from scipy import stats
    gen = RngStream(13).generator()
    x = gen.standard_normal(750)
    d, _ = ks_test(x, stats.norm.cdf)
    ref = stats.kstest(x, "norm")
    assert d == pytest.approx(ref.statistic, abs=1e-12)


def test_ks_pvalues_uniform_under_null():
    # aggregate meta-test: p-values from the null are uniform
    from scipy.stats import norm
    gen = RngStream(14).generator()
    ps = []
    for _ in range(200):
        x = gen.standard_normal(400)
        ps.append(ks_test(x, norm.cdf)[1])
    d = ks_statistic(np.array(ps), lambda u: min(max(u, 0.0), 1.0))
    assert d < 0.12


def test_ks_needs_100_samples():
    from scipy.stats import norm
    with pytest.raises(ValueError, match="100"):
        ks_test(np.zeros(50), norm.cdf)


# -- empirical moments ----------------------------------------------------------


def test_empirical_cov_zero_paths():
    cov, se = empirical_cov(np.zeros((200, 4)))
    assert np.all(cov == 0)


def test_empirical_cov_iid_identity():
    gen = RngStream(15).generator()
    w = gen.standard_normal((20000, 4))
    cov, se = empirical_cov(w)
    assert np.all(np.abs(cov - np.eye(4)) < 4 * se + 1e-8)


def test_max_cov_deviation_reports_worst_entry():
    spec = LimitSpec("time_changed_bm", p=2)
    grid = np.array([0.25, 0.5, 1.0])
    w = simulate_gaussian(spec, grid, 8000, RngStream(16))
    out = max_cov_deviation(w, grid, spec.cov)
    assert out["max_abs_dev"] < 0.08


# -- increment diagnostic --------------------------------------------------------


def brownian_ensemble(reps, m, seed):
    gen = RngStream(seed).generator()
    incr = gen.standard_normal((reps, m)) * math.sqrt(1.0 / m)
    return np.cumsum(incr, axis=1), np.arange(1, m + 1) / m


def test_increment_diag_beta2_brownian():
    # E|B(t)-B(s)|^2 = t - s; pairs share replicates, so the reported CI is
    # tighter than true coverage and only the point estimate is pinned
    w, grid = brownian_ensemble(4000, 64, 17)
    fit = increment_moment_diag(w, grid, beta=2.0)
    assert fit.exponent == pytest.approx(1.0, abs=0.05)
    assert fit.ci[0] < 1.05 and fit.ci[1] > 0.95


def test_increment_diag_beta4_brownian():
    # Gaussian fourth moment: E|B(t)-B(s)|^4 = 3 (t-s)^2
    w, grid = brownian_ensemble(4000, 64, 18)
    fit = increment_moment_diag(w, grid, beta=4.0)
    assert fit.exponent == pytest.approx(2.0, abs=0.1)
    assert fit.constant == pytest.approx(3.0, rel=0.25)


def test_increment_diag_constant_paths_degenerate():
    w = np.zeros((500, 8))
    grid = np.linspace(0.1, 1.0, 8)
    fit = increment_moment_diag(w, grid)
    assert fit.degenerate


def test_increment_diag_uses_prefix_floor():
    w, grid = brownian_ensemble(500, 32, 19)
    fit = increment_moment_diag(w, grid, beta=2.0, n=32)
    assert not fit.degenerate
