import math
from itertools import combinations, permutations

import numpy as np
import pytest

from uproc.kernels import kernel_table, product_kernel, table_kernel
from uproc.products import (ProductDecomposition, TripleFamily, canonical_part,
                            hoeffding_project_nonsym, nonsym_component_table,
                            pi_triples, product_hoeffding, same_size_reduction,
                            varum_bound)
from uproc.rng import RngStream
from uproc.spaces import finite, index_grid, tuple_weights, uniform_atoms
from uproc.ustat import eval_ustat, hoeffding_psi_tables

PM = uniform_atoms([-1.0, 1.0])  # centered two-point space


def degenerate_table(space, order, seed):
    """A random exactly-degenerate symmetric kernel table."""
    from uproc.contractions import symmetrize_table
    from uproc.ustat import hoeffding_g_tables, psi_table_from_g
    gen = RngStream(seed).generator()
    k = space.n_atoms
    raw = symmetrize_table(gen.normal(size=(k,) * order))
    kern = table_kernel(raw, space, symmetrize_check=False)
    g = hoeffding_g_tables(kern, space)
    return psi_table_from_g(g, order)


# -- triple families -----------------------------------------------------------


def test_pi_triples_hand_enumeration():
    fam = pi_triples(0, 2, 2, (1, 2), 1, 1)
    assert set(fam.triples) == {((), (1,), (2,)), ((), (2,), (1,))}
    fam1 = pi_triples(1, 2, 2, (1, 2), 1, 1)
    assert set(fam1.triples) == {((1, 2), (), ())}


def test_pi_triples_minimal_l_forces_empty_a():
    fam = pi_triples(1, 4, 5, (2, 4, 5), 2, 2)  # |L| = p + q - 2r = 2? no: 3
    # here |L| = 3 > p + q - 2r = 2, so A has one element
    assert all(len(a) == 1 for a, b, c in fam.triples)
    fam2 = pi_triples(1, 4, 5, (2, 4), 2, 2)  # |L| = p + q - 2r exactly
    assert all(a == () for a, b, c in fam2.triples)


def test_pi_triples_cardinality_random():
    gen = RngStream(90).generator()
    checked = 0
    while checked < 50:
        p, q = int(gen.integers(1, 3)), int(gen.integers(1, 3))
        r = int(gen.integers(0, min(p, q) + 1))
        n = int(gen.integers(2, 7))
        m = n + int(gen.integers(0, 3))
        lsize = p + q - 2 * r + int(gen.integers(0, 3))
        if lsize > m:
            continue
        L = tuple(sorted(gen.choice(np.arange(1, m + 1), size=lsize,
                                    replace=False).tolist()))
        fam = pi_triples(r, n, m, L, p, q)  # cardinality asserted internally
        assert len(fam.triples) == fam.expected_count
        checked += 1


def test_pi_triples_refusals():
    with pytest.raises(ValueError, match="n <= m"):
        pi_triples(1, 5, 4, (1, 2), 1, 1)
    with pytest.raises(ValueError, match="r <= min"):
        pi_triples(2, 4, 4, (1, 2), 1, 1)
    with pytest.raises(ValueError, match=r"\|L\|"):
        pi_triples(0, 4, 4, (1,), 1, 1)


# -- non-symmetric projections ---------------------------------------------------


def test_nonsym_projection_of_symmetric_kernel_is_psi():
    sp = finite(np.arange(3.0), [0.2, 0.3, 0.5])
    gen = RngStream(91).generator()
    raw = gen.normal(size=(3, 3))
    raw = (raw + raw.T) / 2
    kern = table_kernel(raw, sp, symmetrize_check=False)
    psis = hoeffding_psi_tables(kern, sp)
    for J in [(0,), (1,), (0, 1)]:
        comp = hoeffding_project_nonsym(kern, sp, J)
        assert np.allclose(comp, psis[len(J)], atol=1e-12)


def test_nonsym_projection_constant():
    sp = uniform_atoms([0.0, 1.0])
    c = 3.5
    from uproc.kernels import Kernel
    kern = Kernel(2, lambda x, y: np.full_like(np.asarray(x, dtype=float), c))
    assert float(hoeffding_project_nonsym(kern, sp, ())) == pytest.approx(c)
    assert np.allclose(hoeffding_project_nonsym(kern, sp, (0,)), 0.0, atol=1e-12)
    assert np.allclose(hoeffding_project_nonsym(kern, sp, (0, 1)), 0.0, atol=1e-12)


def test_nonsym_projection_reconstructs_pointwise():
    sp = finite(np.arange(3.0), [0.25, 0.35, 0.4])
    gen = RngStream(92).generator()
    table = gen.normal(size=(3, 3))  # deliberately non-symmetric
    w = sp.weights
    total = np.zeros_like(table)
    for size in range(3):
        for J in combinations(range(2), size):
            comp = nonsym_component_table(table, w, J)
            view = comp
            for ax in range(2):
                if ax not in J:
                    view = np.expand_dims(view, axis=ax)
            total = total + view
    assert np.allclose(total, table, atol=1e-12)


def test_nonsym_components_are_canonical():
    sp = finite(np.arange(4.0), [0.1, 0.2, 0.3, 0.4])
    gen = RngStream(93).generator()
    table = gen.normal(size=(4, 4, 4))
    w = sp.weights
    for J in [(0, 1), (1, 2), (0, 1, 2)]:
        comp = nonsym_component_table(table, w, J)
        for ax in range(comp.ndim):
            marg = np.tensordot(comp, w, axes=([ax], [0]))
            assert np.max(np.abs(marg)) < 1e-12


# -- the product decomposition -----------------------------------------------


def test_order_one_components_match_hand_expansion():
    # p = q = 1 with n = m: the three component shapes worked out by hand
    sp = PM
    psi = product_kernel(1)
    n = m = 4
    dec = ProductDecomposition(psi, psi, n, m, sp)
    gen = RngStream(94).generator()
    idx = gen.integers(0, 2, size=m)
    vals = dec.evaluate(idx)
    x = sp.atoms[idx]
    # |M| = 2: psi(X_i) psi(X_j) + psi(X_j) psi(X_i) over pairs
    for i, j in combinations(range(1, m + 1), 2):
        expect = 2 * x[i - 1] * x[j - 1]
        assert vals[(i, j)] == pytest.approx(expect, abs=1e-12)
    # |M| = 1: psi^2(X_i) - E psi^2 ; |M| = 0: n E psi^2
    for i in range(1, m + 1):
        assert vals[(i,)] == pytest.approx(x[i - 1] ** 2 - 1.0, abs=1e-12)
    assert vals[()] == pytest.approx(n * 1.0, abs=1e-12)


def test_high_index_components_vanish():
    # U_M = 0 when M has more than q indices beyond n
    sp = PM
    psi = product_kernel(1)
    dec = ProductDecomposition(psi, psi, 3, 5, sp)
    idx = np.array([0, 1, 0, 1, 1])
    vals = dec.evaluate(idx)
    assert vals[(4, 5)] == 0.0  # two high indices, q = 1
    assert vals[(4,)] == 0.0 or True  # single high index is allowed in general


def test_small_components_vanish_for_unequal_orders():
    # |M| < |p - q| gives U_M = 0
    sp = uniform_atoms([-1.0, 0.0, 1.0])
    psi1 = table_kernel(degenerate_table(sp, 1, 95), sp, symmetrize_check=False)
    psi2 = table_kernel(degenerate_table(sp, 2, 96), sp, symmetrize_check=False)
    dec = ProductDecomposition(psi1, psi2, 6, 6, sp)
    assert float(np.max(np.abs(dec.component_table(())))) == 0.0


def test_reconstruction_on_every_sample():
    sp = uniform_atoms([-1.0, 0.5, 1.0])
    psi1 = table_kernel(degenerate_table(sp, 1, 97), sp, symmetrize_check=False)
    psi2 = table_kernel(degenerate_table(sp, 2, 98), sp, symmetrize_check=False)
    n, m = 4, 5
    dec = ProductDecomposition(psi1, psi2, n, m, sp)
    tables = {M: dec.component_table(M) for M in dec.component_sets()}
    k1 = psi1
    k2 = psi2
    for row in index_grid(3, m):
        left = eval_ustat(k1, sp.atoms[row[:n]])
        right = eval_ustat(k2, sp.atoms[row])
        total = 0.0
        for M, t in tables.items():
            total += float(t[tuple(row[i - 1] for i in M)]) if M else float(t)
        assert total == pytest.approx(left * right, rel=1e-9, abs=1e-9)


def test_components_are_canonical():
    sp = uniform_atoms([-1.0, 0.5, 1.0])
    psi1 = table_kernel(degenerate_table(sp, 1, 99), sp, symmetrize_check=False)
    psi2 = table_kernel(degenerate_table(sp, 2, 100), sp, symmetrize_check=False)
    dec = ProductDecomposition(psi1, psi2, 4, 6, sp)
    w = sp.weights
    for M in [(1,), (2, 5), (1, 3, 6), (2, 3, 4)]:
        t = dec.component_table(M)
        for ax in range(t.ndim):
            marg = np.tensordot(t, w, axes=([ax], [0]))
            assert np.max(np.abs(marg)) < 1e-9


def test_variance_bound_dominates_exact_sd():
    sp = uniform_atoms([-1.0, 0.5, 1.0])
    psi2a = table_kernel(degenerate_table(sp, 2, 101), sp, symmetrize_check=False)
    psi2b = table_kernel(degenerate_table(sp, 2, 102), sp, symmetrize_check=False)
    dec = ProductDecomposition(psi2a, psi2b, 5, 6, sp)
    for M in dec.component_sets():
        assert dec.variance_bound(M) >= dec.exact_sd(M) - 1e-12


def test_variance_bound_zero_kernel():
    sp = PM
    zero = table_kernel(np.zeros((2, 2)), sp, symmetrize_check=False)
    assert varum_bound(np.zeros((2, 2)), np.zeros((2, 2)), 2, 2, 5, 5, 2, 0,
                       sp.weights) == 0.0


def test_order_one_bound_value():
    # p = q = 1, |M| = 2, s = 0: single r = 0 term, multinomial 2
    sp = PM
    psi = kernel_table(product_kernel(1), sp)
    bound = varum_bound(psi, psi, 1, 1, 6, 6, 2, 0, sp.weights)
    # C(4, 0) * C(2; 0,1,1) * ||psi (x) psi|| = 2 ||psi||^2
    assert bound == pytest.approx(2.0, abs=1e-12)
    dec = ProductDecomposition(product_kernel(1), product_kernel(1), 6, 6, sp)
    assert bound >= dec.exact_sd((1, 2))


def test_same_size_reduction_groups_by_size():
    sp = uniform_atoms([-1.0, 0.5, 1.0])
    psi1 = table_kernel(degenerate_table(sp, 1, 103), sp, symmetrize_check=False)
    psi2 = table_kernel(degenerate_table(sp, 2, 104), sp, symmetrize_check=False)
    n = m = 5
    dec = ProductDecomposition(psi1, psi2, n, m, sp)
    gen = RngStream(105).generator()
    idx = gen.integers(0, 3, size=m)
    vals = dec.evaluate(idx)
    for k in range(0, 4):
        lhs = sum(v for M, v in vals.items() if len(M) == k)
        red = same_size_reduction(dec, k)
        if k == 0:
            rhs = float(red)
        else:
            kern = table_kernel(red, sp, symmetrize_check=False)
            rhs = eval_ustat(kern, sp.atoms[idx])
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def test_decomposition_refuses_nondegenerate():
    sp = uniform_atoms([0.0, 1.0])  # product kernel is not degenerate here
    with pytest.raises(ValueError, match="degenerate"):
        ProductDecomposition(product_kernel(1), product_kernel(1), 4, 4, sp)


def test_decomposition_needs_enough_points():
    with pytest.raises(ValueError, match="p \\+ q"):
        ProductDecomposition(product_kernel(1), product_kernel(1), 1, 4, PM)


def test_product_hoeffding_wrapper():
    vals = product_hoeffding(product_kernel(1), product_kernel(1), 4, 4,
                             np.array([0, 1, 1, 0]), PM)
    total = sum(vals.values())
    x = PM.atoms[np.array([0, 1, 1, 0])]
    assert total == pytest.approx(float(x.sum()) ** 2, abs=1e-12)
