import math

import numpy as np
import pytest

from uproc.rgg import (DkNuEstimate, Motif, brute_force_adjacency,
                       brute_force_motif_count, build_graph,
                       changepoint_edge_stat, classify_regime, complete_motif,
                       count_motifs_sequential, cube_edge_probability,
                       edge_motif, estimate_dk_nu, lambda_dense_uniform,
                       limit_cov_rgg, motif_kernel, path_motif,
                       predicted_variance, star_motif, triangle_motif)
from uproc.rng import RngStream
from uproc.spaces import cube_uniform, sample


# -- motifs ---------------------------------------------------------------------


def test_motif_requires_connected():
    with pytest.raises(ValueError, match="connected"):
        Motif(4, ((0, 1), (2, 3)))


def test_motif_canonical_code_invariant_under_relabeling():
    a = Motif(3, ((0, 1), (1, 2)))
    b = Motif(3, ((0, 2), (1, 2)))
    assert a.canonical_code() == b.canonical_code()
    assert a.canonical_code() != triangle_motif().canonical_code()


def test_motif_kernel_coincident_points():
    k = motif_kernel(edge_motif(), 0.5)
    x = np.array([[0.3, 0.3]])
    assert k(x, x)[0] == 0.0  # strict 0 < distance


def test_motif_kernel_triangle():
    k = motif_kernel(triangle_motif(), 0.5)
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [0.05, 0.1]])
    assert k(pts[:1], pts[1:2], pts[2:3])[0] == 1.0


def test_motif_kernel_path_is_induced():
    # an equilateral triple within range is a triangle, not an induced 2-path
    k = motif_kernel(path_motif(3), 0.5)
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [0.05, 0.0866]])
    assert k(pts[:1], pts[1:2], pts[2:3])[0] == 0.0
    far = np.array([[0.45, 0.0]])
    assert k(pts[:1], pts[1:2], far)[0] == 0.0  # disconnected: only one edge
    mid = np.array([[0.2, 0.0]])  # 0-1 edge, 1-2 edge, 0-2 distance 0.2...
    pts2 = np.array([[0.0, 0.0], [0.3, 0.0], [0.6, 0.0]])
    assert k(pts2[:1], pts2[1:2], pts2[2:3])[0] == 1.0


def test_motif_kernel_symmetric():
    from uproc.kernels import check_symmetry
    sp = cube_uniform(2)
    check_symmetry(motif_kernel(triangle_motif(), 0.3), sp, RngStream(1))


def test_motif_kernel_translation_invariant():
    k = motif_kernel(triangle_motif(), 1.0)
    gen = RngStream(2).generator()
    pts = [gen.random((16, 2)) for _ in range(3)]
    shift = np.array([3.7, -1.2])
    base = k(*pts)
    shifted = k(*[q + shift for q in pts])
    assert np.array_equal(base, shifted)


# -- graph construction ------------------------------------------------------------


def test_complete_graph_when_all_close():
    pts = 0.01 * RngStream(3).generator().random((5, 2))
    g = build_graph(pts, radius=0.5)
    assert g.edge_count == 10


def test_empty_graph_when_far():
    pts = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    g = build_graph(pts, radius=0.5)
    assert g.edge_count == 0


def test_radius_must_be_positive():
    with pytest.raises(ValueError, match="positive"):
        build_graph(np.zeros((3, 2)), 0.0)


def test_adjacency_matches_quadratic_oracle():
    gen = RngStream(4).generator()
    pts = gen.random((200, 2))
    radius = 0.08
    g = build_graph(pts, radius)
    ref = brute_force_adjacency(pts, radius)
    for v in range(200):
        assert np.array_equal(g.neighbors(v), np.flatnonzero(ref[v]))


def test_adjacency_matches_oracle_d1_and_d3():
    gen = RngStream(5).generator()
    for d in (1, 3):
        pts = gen.random((120, d))
        g = build_graph(pts, 0.15)
        ref = brute_force_adjacency(pts, 0.15)
        total = sum(len(g.neighbors(v)) for v in range(120))
        assert total == int(ref.sum())
        for v in range(0, 120, 17):
            assert np.array_equal(g.neighbors(v), np.flatnonzero(ref[v]))


# -- sequential counting -------------------------------------------------------------


def test_sequential_edge_count_matches_full_graph():
    gen = RngStream(6).generator()
    pts = gen.random((300, 2))
    g = build_graph(pts, 0.07)
    path = count_motifs_sequential(g, edge_motif(), grid=np.array([1.0]))
    assert path.values[-1] == g.edge_count
    assert path.values[-1] == brute_force_motif_count(pts, edge_motif(), 0.07)


def test_sequential_triangle_count_matches_brute_force():
    gen = RngStream(7).generator()
    pts = 0.35 * gen.random((50, 2))  # clustered so triangles exist
    g = build_graph(pts, 0.12)
    grid = np.array([0.25, 0.5, 0.75, 1.0])
    path = count_motifs_sequential(g, triangle_motif(), grid=grid)
    for tval, cnt in zip(grid, path.values):
        m = int(50 * tval)
        assert cnt == brute_force_motif_count(pts[:m], triangle_motif(), 0.12)


def test_sequential_triangle_count_n300():
    gen = RngStream(71).generator()
    pts = gen.random((300, 2))
    g = build_graph(pts, 0.08)
    path = count_motifs_sequential(g, triangle_motif(), grid=np.array([1.0]))
    assert path.values[-1] == brute_force_motif_count(pts, triangle_motif(), 0.08)


def test_sequential_star4_matches_brute_force():
    gen = RngStream(8).generator()
    pts = 0.4 * gen.random((80, 2))
    g = build_graph(pts, 0.15)
    path = count_motifs_sequential(g, star_motif(4), grid=np.array([0.5, 1.0]))
    for tval, cnt in zip([0.5, 1.0], path.values):
        m = int(80 * tval)
        assert cnt == brute_force_motif_count(pts[:m], star_motif(4), 0.15)


def test_sequential_complete4_matches_brute_force_n80():
    gen = RngStream(81).generator()
    pts = 0.45 * gen.random((80, 2))
    g = build_graph(pts, 0.18)
    path = count_motifs_sequential(g, complete_motif(4), grid=np.array([1.0]))
    assert path.values[-1] == brute_force_motif_count(pts, complete_motif(4), 0.18)


def test_sequential_counts_nondecreasing():
    gen = RngStream(9).generator()
    pts = gen.random((150, 2))
    g = build_graph(pts, 0.1)
    path = count_motifs_sequential(g, edge_motif())
    assert np.all(np.diff(path.values) >= 0)


# -- regimes and limits ----------------------------------------------------------------


def test_classify_sparse():
    rule = lambda n: n ** (-1.3 / 2)  # t^d = n^{-1.3} in d = 2
    params = classify_regime([500, 1000, 2000, 4000], rule, 2, 2, True)
    assert params.case == "C1"
    assert params.window_ok


def test_classify_thermodynamic():
    rule = lambda n: (1.0 / n) ** 0.5
    params = classify_regime([500, 1000, 2000], rule, 2, 2, True)
    assert params.case == "C4"
    assert params.rho == pytest.approx(1.0, rel=1e-9)


def test_classify_dense_uniform_window():
    rule = lambda n: n ** (-0.6 / 2)
    params = classify_regime([500, 1000, 2000], rule, 2, 2, True)
    assert params.case == "C2"
    assert params.window_ok
    params3 = classify_regime([500, 1000, 2000], rule, 2, 2, False)
    assert params3.case == "C3"


def test_limit_cov_cases():
    assert limit_cov_rgg("C1", 2, 0.5, 1.0) == pytest.approx(0.25)
    c3 = limit_cov_rgg("C3", 2, 0.5, 1.0)
    assert c3 == pytest.approx(0.25)
    assert limit_cov_rgg("C3", 2, 0.5, 0.8) == pytest.approx(0.25 * 0.8)
    # C2 with lambda = +inf reduces to the C3 form
    inf = limit_cov_rgg("C2", 2, 0.3, 0.7, lam=math.inf)
    assert inf == pytest.approx(limit_cov_rgg("C3", 2, 0.3, 0.7))
    zero = limit_cov_rgg("C2", 2, 0.3, 0.7, lam=0.0)
    assert zero == pytest.approx(0.09)  # (s^t)^2 (svt)^0 term only
    c4 = limit_cov_rgg("C4", 2, 1.0, 1.0, rho=1.0, d_list=[math.pi ** 2, math.pi],
                       nu=math.pi)
    assert c4 == pytest.approx(1.0)


def test_lambda_conventions():
    assert lambda_dense_uniform(100, 0.1, 2, 2, var_g1=0.0, d2=1.0) == 0.0
    assert math.isinf(lambda_dense_uniform(100, 0.1, 2, 2, var_g1=1.0, d2=0.0))


# -- motif integral constants ------------------------------------------------------------


def test_nu_edge_is_ball_volume():
    sp = cube_uniform(2)
    est = estimate_dk_nu(sp, edge_motif(), k=1, budget=200000, rng=RngStream(10))
    assert est.nu == pytest.approx(math.pi, abs=4 * est.nu_se)
    assert est.feasible


def test_d1_equals_nu_squared_for_uniform():
    sp = cube_uniform(2)
    est = estimate_dk_nu(sp, edge_motif(), k=1, budget=200000, rng=RngStream(11))
    rel_se = (est.d_k_se + 2 * est.nu * est.nu_se) / est.nu ** 2
    assert abs(est.d_k - est.nu ** 2) / est.nu ** 2 < 3 * rel_se + 0.02


def test_d2_edge_is_ball_volume():
    sp = cube_uniform(2)
    est = estimate_dk_nu(sp, edge_motif(), k=2, budget=200000, rng=RngStream(12))
    assert est.d_k == pytest.approx(math.pi, abs=4 * est.d_k_se)


def test_estimates_stable_under_doubled_budget():
    sp = cube_uniform(2)
    a = estimate_dk_nu(sp, triangle_motif(), k=2, budget=100000, rng=RngStream(13))
    b = estimate_dk_nu(sp, triangle_motif(), k=2, budget=200000, rng=RngStream(14))
    assert abs(a.d_k - b.d_k) < 3 * (a.d_k_se + b.d_k_se)
    assert abs(a.nu - b.nu) < 3 * (a.nu_se + b.nu_se)


def test_predicted_variance_c1_tracks_mean():
    # sparse edges: Var ~ (d_2 / 2) n^2 t^d with d_2 = pi for the edge motif
    v = predicted_variance("C1", 1000, 1000 ** -0.65, 2, 2, [math.pi ** 2, math.pi],
                           math.pi)
    assert v == pytest.approx(math.pi / 2 * 1000 ** 2 * 1000 ** -1.3, rel=1e-12)


# -- changepoint edge statistic --------------------------------------------------------


def test_cube_edge_probability_against_quadrature():
    # P(|X-Y| <= t) = int over the displacement ball of prod_i (1 - |u_i|),
    # integrated here numerically in polar coordinates
    from scipy import integrate
    t = 0.2
    exact = cube_edge_probability(t, 2)

    def ring(r):
        ang, _ = integrate.quad(
            lambda th: (1 - r * abs(math.cos(th))) * (1 - r * abs(math.sin(th))),
            0, 2 * math.pi)
        return r * ang

    val, _ = integrate.quad(ring, 0, t)
    assert exact == pytest.approx(val, abs=1e-9)
    assert cube_edge_probability(0.3, 1) == pytest.approx(2 * 0.3 - 0.09)


def test_cross_block_counts_match_direct():
    gen = RngStream(15).generator()
    pts = gen.random((40, 2))
    radius = 0.2
    g = build_graph(pts, radius)
    eta = cube_edge_probability(radius, 2)
    sigma = 1.0
    grid = np.arange(1, 41) / 40
    stat = changepoint_edge_stat(g, eta=eta, sigma=sigma, grid=grid)
    adj = brute_force_adjacency(pts, radius)
    for k in (1, 10, 25, 39, 40):
        direct = int(np.sum(adj[:k, k:]))
        expect = (direct - eta * k * (40 - k)) / sigma
        assert stat.path.values[k - 1] == pytest.approx(expect, abs=1e-12)


def test_edge_stat_endpoints_vanish():
    gen = RngStream(16).generator()
    pts = gen.random((30, 2))
    g = build_graph(pts, 0.15)
    stat = changepoint_edge_stat(g, eta=0.05, sigma=2.0)
    assert stat.path.values[-1] == pytest.approx(-0.0)  # k = n: empty upper block


def test_edge_stat_argmax_is_smallest():
    gen = RngStream(17).generator()
    pts = gen.random((25, 2))
    g = build_graph(pts, 0.2)
    stat = changepoint_edge_stat(g, eta=cube_edge_probability(0.2, 2), sigma=1.0)
    neg = -stat.path.values
    first = np.flatnonzero(neg == neg.max())[0]
    assert stat.argmax == pytest.approx(stat.path.grid[first])


def test_edge_stat_refuses_degenerate_sigma():
    g = build_graph(np.zeros((4, 2)) + np.arange(4)[:, None], 0.1)
    with pytest.raises(ValueError, match="sigma"):
        changepoint_edge_stat(g, eta=0.1, sigma=0.0)
