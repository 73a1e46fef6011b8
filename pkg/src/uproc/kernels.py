"""Symmetric kernels of fixed order, possibly parameterised by the sample size.

A Kernel wraps a vectorised evaluator fn(*coords, n=...) -> values, where each
coordinate is an array of shape (B,) or (B, d).  On finite spaces a kernel can
be materialised as a dense table with one axis per argument; the table is the
workhorse of every exact computation in the package.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import permutations
from typing import Callable, Optional

import numpy as np

from .rng import as_generator
from .spaces import FINITE, Space, circle_dist, index_grid, sample, tuple_weights


@dataclass(frozen=True)
class Kernel:
    """Symmetric measurable kernel of a fixed order."""

    order: int
    fn: Callable
    size_dependent: bool = False
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    def __call__(self, *coords, n: Optional[int] = None) -> np.ndarray:
        if len(coords) != self.order:
            raise ValueError(
                f"kernel {self.name or '<anon>'} has order {self.order}, "
                f"got {len(coords)} arguments"
            )
        if self.size_dependent:
            if n is None:
                raise ValueError(f"kernel {self.name!r} needs the sample size n")
            return np.asarray(self.fn(*coords, n=n), dtype=float)
        return np.asarray(self.fn(*coords), dtype=float)


def constant_kernel(c: float) -> Kernel:
    return Kernel(order=0, fn=lambda: np.float64(c), name=f"const({c:g})")


def from_scalar(order: int, f: Callable, name: str = "", size_dependent=False) -> Kernel:
    """Wrap a scalar function through np.vectorize (slow; tests only)."""
    vf = np.vectorize(f)
    if size_dependent:
        return Kernel(order, lambda *xs, n=None: vf(*xs, n), True, name)
    return Kernel(order, lambda *xs: vf(*xs), False, name)


def check_symmetry(kernel: Kernel, space: Space, rng, n: Optional[int] = None,
                   trials: int = 32, tol: float = 1e-12) -> float:
    """Spot-check invariance under argument permutations on random tuples.

    Returns the worst absolute discrepancy; raises if it exceeds tol.
    """
    p = kernel.order
    if p <= 1:
        return 0.0
    gen = as_generator(rng)
    pts = [sample(space, trials, gen) for _ in range(p)]
    base = kernel(*pts, n=n)
    worst = 0.0
    for perm in permutations(range(p)):
        v = kernel(*[pts[i] for i in perm], n=n)
        worst = max(worst, float(np.max(np.abs(v - base))))
    if worst > tol:
        raise ValueError(f"kernel {kernel.name!r} is not symmetric: "
                         f"max permutation gap {worst:.3g} > {tol:g}")
    return worst


# -- finite-space tables ---------------------------------------------------


def kernel_table(kernel: Kernel, space: Space, n: Optional[int] = None) -> np.ndarray:
    """Dense table of kernel values over all atom tuples, shape (K,)*order."""
    if space.kind != FINITE:
        raise ValueError("kernel_table needs a finite space")
    p = kernel.order
    k = space.n_atoms
    if p == 0:
        return np.asarray(kernel(n=n), dtype=float).reshape(())
    idx = index_grid(k, p)
    args = [space.atoms[idx[:, j]] for j in range(p)]
    vals = kernel(*args, n=n)
    return np.asarray(vals, dtype=float).reshape((k,) * p)


def table_kernel(table: np.ndarray, space: Space, name: str = "table",
                 symmetrize_check: bool = True) -> Kernel:
    """Kernel backed by a dense table over a finite space's atoms.

    Arguments are matched to atoms by value; unknown values raise.
    """
    table = np.asarray(table, dtype=float)
    p = table.ndim
    if symmetrize_check and p > 1:
        for perm in permutations(range(p)):
            if not np.allclose(table, np.transpose(table, perm), atol=1e-12):
                raise ValueError("table kernel is not symmetric")
    atoms = space.atoms

    def lookup(values):
        if atoms.ndim == 1:
            hit = np.asarray(values)[..., None] == atoms
        else:
            hit = np.all(np.asarray(values)[..., None, :] == atoms, axis=-1)
        if not np.all(hit.any(axis=-1)):
            raise ValueError("value not among the space's atoms")
        return np.argmax(hit, axis=-1)

    def fn(*xs):
        idx = tuple(lookup(x) for x in xs)
        return table[idx]

    return Kernel(order=p, fn=fn, name=name)


def table_expect(table: np.ndarray, weights: np.ndarray) -> float:
    """Full contraction of a table against product weights."""
    m = table.ndim
    out = table
    for _ in range(m):
        out = np.tensordot(out, weights, axes=([out.ndim - 1], [0]))
    return float(out)


def table_l2_inner(ta: np.ndarray, tb: np.ndarray, weights: np.ndarray) -> float:
    if ta.shape != tb.shape:
        raise ValueError("tables must share their shape")
    return table_expect(ta * tb, weights)


def table_l2_norm(table: np.ndarray, weights: np.ndarray) -> float:
    return float(np.sqrt(max(table_expect(table * table, weights), 0.0)))


def table_lq_norm(table: np.ndarray, weights: np.ndarray, q: float) -> float:
    return float(table_expect(np.abs(table) ** q, weights) ** (1.0 / q))


# -- named kernel factories -----------------------------------------------


def product_kernel(order: int, center: float = 0.0) -> Kernel:
    """psi(x_1..x_p) = prod x_i - center (scalar coordinates)."""

    def fn(*xs):
        out = np.ones_like(np.asarray(xs[0], dtype=float))
        for x in xs:
            out = out * np.asarray(x, dtype=float)
        return out - center

    nm = f"product(p={order})" + (f"-{center:g}" if center else "")
    return Kernel(order=order, fn=fn, name=nm)


def indicator_match_kernel() -> Kernel:
    """psi(x, y) = 1{x = y} on a finite space."""

    def fn(x, y):
        x, y = np.asarray(x), np.asarray(y)
        if x.ndim > 1:
            return np.all(x == y, axis=-1).astype(float)
        return (x == y).astype(float)

    return Kernel(order=2, fn=fn, name="indicator_match")


def distance_threshold_kernel(space: Space, theta, centered: bool = False,
                              center_value: Optional[float] = None) -> Kernel:
    """psi_n(x, y) = 1{0 < d(x, y) < theta(n)} with optional exact centering.

    theta is either a constant or a callable n -> radius.  On the circle the
    pair probability is 2*theta (theta <= 1/2), so the centered version is
    exactly degenerate; elsewhere pass center_value explicitly.
    """
    theta_fn = theta if callable(theta) else (lambda n: theta)

    def dist(x, y):
        if space.kind == "circle_uniform":
            return circle_dist(x, y)
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        if x.ndim > 1:
            return np.linalg.norm(x - y, axis=-1)
        return np.abs(x - y)

    def fn(x, y, n=None):
        t = float(theta_fn(n))
        d = dist(x, y)
        val = ((d > 0) & (d < t)).astype(float)
        if centered:
            if center_value is not None:
                val = val - center_value
            elif space.kind == "circle_uniform":
                if t > 0.5:
                    raise ValueError("circle threshold must be <= 1/2 for exact centering")
                val = val - 2.0 * t
            else:
                raise ValueError("centered distance kernel needs center_value "
                                 "outside the circle")
        return val

    return Kernel(order=2, fn=fn, size_dependent=callable(theta) or centered,
                  name="distance_threshold" + ("_centered" if centered else ""))


def load_table_kernel_csv(path, space: Space, name: str = "csv_table") -> Kernel:
    """User table kernel: CSV rows `i_1,...,i_p,value` of atom indices.

    Each row sets the value on the whole permutation orbit of its index
    tuple; conflicting values for one orbit raise.
    """
    raw = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    p = raw.shape[1] - 1
    k = space.n_atoms
    table = np.zeros((k,) * p)
    assigned = np.zeros((k,) * p, dtype=bool)
    idx = raw[:, :p].astype(int)
    if idx.min() < 0 or idx.max() >= k:
        raise ValueError("atom index out of range in kernel CSV")
    for row, val in zip(idx, raw[:, p]):
        for perm in set(permutations(row.tolist())):
            if assigned[perm] and table[perm] != val:
                raise ValueError(f"conflicting values for atom tuple {perm}")
            table[perm] = val
            assigned[perm] = True
    if not assigned.all():
        warnings.warn("kernel CSV left unset tuples at zero")
    return table_kernel(table, space, name=name, symmetrize_check=False)
