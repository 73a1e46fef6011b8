"""Contraction kernels: partial inner products of two symmetric kernels.

The contraction with index (r, l) identifies r arguments of each kernel and
integrates l of them out, leaving a kernel of order p + q - r - l whose
arguments are ordered as [identified-not-integrated | left-only | right-only].
l = 0 is the pointwise-product convention, l = r = 0 the tensor product.
Ill-defined points are set to zero by convention (irrelevant on finite
spaces, where everything is a dense tensor contraction).
"""

from __future__ import annotations

import math
import string
import warnings
from dataclasses import dataclass
from itertools import permutations
from typing import Optional, Tuple

import numpy as np

from .kernels import Kernel, kernel_table, table_expect
from .spaces import FINITE, Space, sample
from .ustat import EXACT, MonteCarlo, _mc_expand

M_OUT_DEFAULT = 4000
M_IN_DEFAULT = 2000
SE_BATCHES = 20


@dataclass(frozen=True)
class ContractionIndex:
    """Index (r, l) of a contraction between kernels of orders p and q."""

    r: int
    l: int
    p: int
    q: int

    def __post_init__(self):
        if not (0 <= self.l <= self.r <= min(self.p, self.q)):
            raise ValueError(
                f"need 0 <= l <= r <= min(p, q); got r={self.r}, l={self.l}, "
                f"p={self.p}, q={self.q}"
            )

    @property
    def out_order(self) -> int:
        return self.p + self.q - self.r - self.l


def contract_tables(tpsi: np.ndarray, tphi: np.ndarray, r: int, l: int,
                    weights: np.ndarray) -> np.ndarray:
    """Exact contraction of two kernel tables on a finite space."""
    p, q = tpsi.ndim, tphi.ndim
    ContractionIndex(r, l, p, q)
    letters = string.ascii_lowercase
    need = l + (r - l) + (p - r) + (q - r)
    if need + 1 > len(letters):
        raise ValueError("contraction order too large for einsum labels")
    ints = letters[:l]
    diag = letters[l:r]
    pfree = letters[r:p]
    qfree = letters[p:p + q - r]
    lhs = [ints + diag + pfree, ints + diag + qfree] + list(ints)
    operands = [tpsi, tphi] + [weights] * l
    out = diag + pfree + qfree
    return np.einsum(",".join(lhs) + "->" + out, *operands)


def contract(psi: Kernel, phi: Kernel, idx: ContractionIndex, space: Space,
             mode, n: Optional[int] = None) -> Kernel:
    """The contraction kernel of psi and phi at index (r, l).

    Exact mode materialises the dense tensor contraction on a finite space;
    Monte Carlo mode returns a lazy kernel integrating the shared coordinates
    with fresh draws per evaluation.
    """
    if psi.order != idx.p or phi.order != idx.q:
        raise ValueError("kernel orders do not match the contraction index")
    r, l = idx.r, idx.l
    name = f"({psi.name}*[{r},{l}]{phi.name})"
    if mode == EXACT:
        if space.kind != FINITE:
            raise ValueError("exact contraction needs a finite space")
        from .kernels import constant_kernel, table_kernel
        t = contract_tables(kernel_table(psi, space, n=n),
                            kernel_table(phi, space, n=n), r, l, space.weights)
        if t.ndim == 0:
            return constant_kernel(float(t))
        return table_kernel(t, space, name=name, symmetrize_check=False)
    if not isinstance(mode, MonteCarlo):
        raise ValueError(f"unknown mode {mode!r}")
    gen, m = mode.rng, mode.m
    p, q = idx.p, idx.q
    nd, npf, nqf = r - l, p - r, q - r

    def fn(*args, n=n):
        diag = args[:nd]
        pfree = args[nd:nd + npf]
        qfree = args[nd + npf:]
        if l == 0:
            a = psi(*diag, *pfree, n=n) if p else np.float64(psi(n=n))
            b = phi(*diag, *qfree, n=n) if q else np.float64(phi(n=n))
            return a * b
        b0 = len(np.asarray(args[0])) if args else 1
        shared = [sample(space, b0 * m, gen) for _ in range(l)]
        ex = _mc_expand(list(args), b0, m)
        dg, pf, qf = ex[:nd], ex[nd:nd + npf], ex[nd + npf:]
        va = psi(*shared, *dg, *pf, n=n)
        vb = phi(*shared, *dg, *qf, n=n)
        vals = (va * vb).reshape(b0, m)
        out = vals.mean(axis=1)
        return out if args else np.float64(out[0])

    return Kernel(order=idx.out_order, fn=fn,
                  size_dependent=psi.size_dependent or phi.size_dependent,
                  name=name)


def contraction_norm(psi: Kernel, phi: Kernel, idx: ContractionIndex,
                     space: Space, mode, n: Optional[int] = None,
                     m_out: int = M_OUT_DEFAULT,
                     m_in: int = M_IN_DEFAULT) -> Tuple[float, float]:
    """L2 norm of the contraction, with a standard error in Monte Carlo mode.

    The MC estimator of the squared norm multiplies two conditionally
    independent inner-integral replicas, so it is unbiased; a negative
    estimate is clamped to zero with a warning.
    """
    if mode == EXACT:
        if space.kind != FINITE:
            raise ValueError("exact contraction norms need a finite space")
        t = contract_tables(kernel_table(psi, space, n=n),
                            kernel_table(phi, space, n=n),
                            idx.r, idx.l, space.weights)
        if t.ndim == 0:
            return abs(float(t)), 0.0
        return math.sqrt(max(table_expect(t * t, space.weights), 0.0)), 0.0
    if not isinstance(mode, MonteCarlo):
        raise ValueError(f"unknown mode {mode!r}")
    gen = mode.rng
    h1 = contract(psi, phi, idx, space, MonteCarlo(gen, max(m_in, 100)), n=n)
    h2 = contract(psi, phi, idx, space, MonteCarlo(gen, max(m_in, 100)), n=n)
    if idx.out_order == 0:
        v1, v2 = float(h1(n=n)), float(h2(n=n))
        return math.sqrt(max(v1 * v2, 0.0)), abs(v1 - v2) / 2
    outer = [sample(space, m_out, gen) for _ in range(idx.out_order)]
    prod = np.asarray(h1(*outer, n=n)) * np.asarray(h2(*outer, n=n))
    est = float(prod.mean())
    batches = np.array_split(prod, SE_BATCHES)
    bm = np.array([b.mean() for b in batches])
    se_sq = float(bm.std(ddof=1) / math.sqrt(len(bm)))
    if est < 0:
        warnings.warn("negative squared-norm estimate clamped to 0")
        return 0.0, se_sq
    norm = math.sqrt(est)
    se = se_sq / (2 * norm) if norm > 0 else se_sq
    return norm, se


def symmetrize(f: Kernel) -> Kernel:
    """Average of f over all argument permutations."""
    p = f.order
    if p <= 1:
        return f

    def fn(*xs, n=None):
        acc = None
        for perm in permutations(range(p)):
            v = f(*[xs[i] for i in perm], n=n)
            acc = v if acc is None else acc + v
        return acc / math.factorial(p)

    return Kernel(order=p, fn=fn if f.size_dependent else (lambda *xs: fn(*xs)),
                  size_dependent=f.size_dependent, name=f"sym[{f.name}]")


def symmetrize_table(t: np.ndarray) -> np.ndarray:
    p = t.ndim
    if p <= 1:
        return t
    return sum(np.transpose(t, perm) for perm in permutations(range(p))) / math.factorial(p)


# -- norms used by the condition checkers -----------------------------------


def table_norm(t: np.ndarray, weights: np.ndarray) -> float:
    if t.ndim == 0:
        return abs(float(t))
    return math.sqrt(max(table_expect(t * t, weights), 0.0))


def table_inner(ta: np.ndarray, tb: np.ndarray, weights: np.ndarray) -> float:
    if ta.ndim == 0:
        return float(ta) * float(tb)
    return table_expect(ta * tb, weights)
