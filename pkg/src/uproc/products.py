"""Products of degenerate symmetric U-statistics over different sample sizes.

Decomposes J_p(psi) * J_q(phi), where psi uses the first n points and phi the
first m >= n points, into its canonical components U_M indexed by subsets
M of the larger index range.  Everything here is exact-mode only: the value
of the decomposition is as a verifiable identity and as the engine behind
finite-dimensional CLT bounds, not as a production computation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, Sequence, Tuple

import numpy as np

from .contractions import contract_tables, symmetrize_table, table_norm
from .kernels import Kernel, kernel_table
from .spaces import FINITE, Space
from .ustat import EXACT, check_degeneracy

IndexSet = Tuple[int, ...]  # sorted, 1-based sample positions


def _multinomial(total: int, parts: Sequence[int]) -> int:
    if any(p < 0 for p in parts) or sum(parts) != total:
        return 0
    out = math.factorial(total)
    for p in parts:
        out //= math.factorial(p)
    return out


@dataclass(frozen=True)
class TripleFamily:
    """All splits (A, B, C) of an index set L with the block-size profile
    |A| = 2r + |L| - p - q, |B| = p - r, |C| = q - r, where A, B stay within
    the smaller range [n] and C may reach into [m]."""

    r: int
    n: int
    m: int
    L: IndexSet
    p: int
    q: int
    triples: tuple

    @property
    def expected_count(self) -> int:
        s = sum(1 for i in self.L if i > self.n)
        l = len(self.L)
        return _multinomial(l - s, (2 * self.r + l - self.p - self.q,
                                    self.p - self.r, self.q - self.r - s))


def pi_triples(r: int, n: int, m: int, L, p: int, q: int) -> TripleFamily:
    """Enumerate the triple family and validate its multinomial cardinality."""
    L = tuple(sorted(int(i) for i in L))
    if n > m:
        raise ValueError(f"need n <= m, got n={n}, m={m}")
    if r > min(p, q) or r < 0:
        raise ValueError(f"need 0 <= r <= min(p, q), got r={r}")
    if len(L) < p + q - 2 * r:
        raise ValueError(f"need |L| >= p+q-2r = {p + q - 2 * r}, got {len(L)}")
    if any(i < 1 or i > m for i in L):
        raise ValueError("index set must lie within 1..m")
    a_size = 2 * r + len(L) - p - q
    low = tuple(i for i in L if i <= n)
    high = tuple(i for i in L if i > n)
    triples = []
    for a in combinations(low, a_size):
        rest = [i for i in low if i not in a]
        for b in combinations(rest, p - r):
            c = tuple(sorted([i for i in rest if i not in b] + list(high)))
            if len(c) == q - r:
                triples.append((a, b, c))
    fam = TripleFamily(r, n, m, L, p, q, tuple(triples))
    if len(fam.triples) != fam.expected_count:
        raise AssertionError(
            f"triple family size {len(fam.triples)} != multinomial "
            f"{fam.expected_count} for r={r}, L={L}")
    return fam


# -- non-symmetric Hoeffding projections ------------------------------------


def _integrate_axes(table: np.ndarray, axes, weights: np.ndarray) -> np.ndarray:
    out = table
    for ax in sorted(axes, reverse=True):
        out = np.tensordot(out, weights, axes=([ax], [0]))
    return out


def nonsym_component_table(table: np.ndarray, weights: np.ndarray,
                           axes_subset) -> np.ndarray:
    """Hoeffding component of a (not necessarily symmetric) kernel table.

    axes_subset selects which argument positions the component depends on;
    the result is a table over those axes in their original order.  The
    component integrates to zero in every single coordinate.
    """
    k = table.ndim
    J = tuple(sorted(axes_subset))
    if any(ax < 0 or ax >= k for ax in J):
        raise ValueError("axes subset out of range")
    pos = {ax: i for i, ax in enumerate(J)}
    out = np.zeros(tuple(table.shape[ax] for ax in J))
    for size in range(len(J) + 1):
        for K in combinations(J, size):
            sign = (-1.0) ** (len(J) - size)
            tk = _integrate_axes(table, [ax for ax in range(k) if ax not in K],
                                 weights)
            # embed the |K|-axis table into the J axes
            view = tk
            for i, ax in enumerate(J):
                if ax not in K:
                    view = np.expand_dims(view, axis=i)
            out = out + sign * view
    return out


def hoeffding_project_nonsym(f: Kernel, space: Space, axes_subset,
                             n=None) -> np.ndarray:
    """Component table of the kernel f on a finite space (exact)."""
    if space.kind != FINITE:
        raise ValueError("non-symmetric projections are exact-mode only")
    return nonsym_component_table(kernel_table(f, space, n=n), space.weights,
                                  axes_subset)


def canonical_part(table: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """The component depending on all arguments (top projection)."""
    return nonsym_component_table(table, weights, range(table.ndim))


# -- the product decomposition ------------------------------------------------


def _component_tables(psi_t: np.ndarray, phi_t: np.ndarray, p: int, q: int,
                      weights: np.ndarray) -> Dict[int, np.ndarray]:
    """Canonical projections of the contractions, keyed by r per component size."""
    out = {}
    for k in range(0, p + q + 1):
        for r in range(math.ceil((p + q - k) / 2), min(p, q, p + q - k) + 1):
            l = p + q - r - k
            out[(r, k)] = canonical_part(
                contract_tables(psi_t, phi_t, r, l, weights), weights)
    return out


class ProductDecomposition:
    """Exact canonical decomposition of J_p(psi) * J_q(phi), n <= m points.

    Exposes per-component tables (functions of the points indexed by M, in
    increasing position order) and their evaluation on a concrete sample.
    """

    def __init__(self, psi: Kernel, phi: Kernel, n: int, m: int, space: Space,
                 degeneracy_tol: float = 1e-10):
        if space.kind != FINITE:
            raise ValueError("the product decomposition is exact-mode only")
        if n > m:
            raise ValueError(f"need n <= m, got n={n}, m={m}")
        p, q = psi.order, phi.order
        if n < p + q:
            raise ValueError(f"need n >= p + q = {p + q}, got n={n}")
        for kern, label in ((psi, "left"), (phi, "right")):
            resid = check_degeneracy(kern, space, EXACT)
            if resid > degeneracy_tol:
                raise ValueError(f"{label} kernel is not degenerate: "
                                 f"residual {resid:.3g}")
        self.space = space
        self.p, self.q, self.n, self.m = p, q, n, m
        self.psi_t = kernel_table(psi, space)
        self.phi_t = kernel_table(phi, space)
        self._canon = _component_tables(self.psi_t, self.phi_t, p, q,
                                        space.weights)

    def component_sets(self):
        """All index sets M with a (possibly zero) component."""
        for k in range(0, self.p + self.q + 1):
            for M in combinations(range(1, self.m + 1), k):
                yield M

    def component_table(self, M: IndexSet) -> np.ndarray:
        """U_M as a table over the coordinates (X_i), i in M ascending."""
        M = tuple(sorted(M))
        k = len(M)
        s = sum(1 for i in M if i > self.n)
        p, q, n = self.p, self.q, self.n
        katoms = self.space.n_atoms
        out = np.zeros((katoms,) * k)
        for r in range(math.ceil((p + q - k) / 2), min(p, q - s, p + q - k) + 1):
            coeff = math.comb(n - k + s, p + q - r - k)
            if coeff == 0:
                continue
            h = self._canon[(r, k)]
            acc = np.zeros_like(out)
            for (a, b, c) in pi_triples(r, n, self.m, M, p, q).triples:
                slots = list(a) + list(b) + list(c)
                axes = [slots.index(i) for i in M]
                acc = acc + (np.transpose(h, axes) if k else h)
            out = out + coeff * acc
        return out

    def evaluate(self, sample_idx: np.ndarray) -> Dict[IndexSet, float]:
        """All component values on a sample given as atom indices (length m)."""
        sample_idx = np.asarray(sample_idx, dtype=int)
        if len(sample_idx) != self.m:
            raise ValueError(f"sample must have length m = {self.m}")
        out = {}
        for M in self.component_sets():
            t = self.component_table(M)
            if len(M) == 0:
                out[M] = float(t)
            else:
                out[M] = float(t[tuple(sample_idx[i - 1] for i in M)])
        return out

    def variance_bound(self, M: IndexSet) -> float:
        """Closed-form upper bound on the standard deviation of U_M."""
        M = tuple(sorted(M))
        k, s = len(M), sum(1 for i in M if i > self.n)
        return varum_bound(self.psi_t, self.phi_t, self.p, self.q,
                           self.n, self.m, k, s, self.space.weights)

    def exact_sd(self, M: IndexSet) -> float:
        """Exact standard deviation of U_M over the product law."""
        t = self.component_table(M)
        if t.ndim == 0:
            return 0.0
        w = self.space.weights
        mean = t
        sq = t * t
        for _ in range(t.ndim):
            mean = np.tensordot(mean, w, axes=([mean.ndim - 1], [0]))
            sq = np.tensordot(sq, w, axes=([sq.ndim - 1], [0]))
        return math.sqrt(max(float(sq) - float(mean) ** 2, 0.0))


def product_hoeffding(psi: Kernel, phi: Kernel, n: int, m: int,
                      sample_idx: np.ndarray, space: Space) -> Dict[IndexSet, float]:
    """Component values U_M of J_p(psi) * J_q(phi) on a concrete sample.

    The sample is given as atom indices; the values over all M sum to the
    product of the two U-statistics evaluated on that sample.
    """
    dec = ProductDecomposition(psi, phi, n, m, space)
    return dec.evaluate(sample_idx)


def varum_bound(psi_t: np.ndarray, phi_t: np.ndarray, p: int, q: int,
                n: int, m: int, k: int, s: int, weights: np.ndarray) -> float:
    """Binomial-weighted contraction-norm bound on sd(U_M), |M|=k with s high indices."""
    total = 0.0
    for r in range(math.ceil((p + q - k) / 2), min(p, q - s, p + q - k) + 1):
        l = p + q - r - k
        norm = table_norm(contract_tables(psi_t, phi_t, r, l, weights), weights)
        total += (math.comb(n - k + s, p + q - r - k)
                  * _multinomial(k - s, (2 * r + k - p - q, p - r, q - r - s))
                  * norm)
    return total


def same_size_reduction(dec: ProductDecomposition, k: int) -> np.ndarray:
    """For n = m: the size-k part as a symmetric degenerate kernel table.

    Grouping the components U_M over |M| = k collapses, by symmetry, to a
    U-statistic of the symmetrised contraction's canonical part; returns
    that order-k table (to be summed over k-subsets with the right weights).
    """
    if dec.n != dec.m:
        raise ValueError("the reduction applies to equal sample sizes")
    p, q, n = dec.p, dec.q, dec.n
    w = dec.space.weights
    katoms = dec.space.n_atoms
    out = np.zeros((katoms,) * k if k else ())
    for r in range(math.ceil((p + q - k) / 2), min(p, q, p + q - k) + 1):
        l = p + q - r - k
        coeff = (math.comb(n - k, p + q - r - k)
                 * _multinomial(k, (2 * r + k - p - q, p - r, q - r)))
        sym = canonical_part(symmetrize_table(
            contract_tables(dec.psi_t, dec.phi_t, r, l, w)), w)
        out = out + coeff * sym
    return out
