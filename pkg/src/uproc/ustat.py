"""U-statistics, sequential U-processes, and their Hoeffding decomposition.

The sum J_p over all p-subsets of a sample, the prefix path t -> J_p on
X_1..X_{floor(nt)}, the conditional-expectation kernels g_l, the canonical
components psi_k, the two variance formulas, and the normalised process W_n.

Exact mode works on finite spaces through dense tables; Monte Carlo mode
builds closure kernels that integrate with fresh inner draws per evaluation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .kernels import Kernel, kernel_table, table_expect, table_l2_norm
from .rng import as_generator
from .spaces import FINITE, Space, sample

EXACT = "exact"

DOWNSAMPLE_LIMIT = 512


@dataclass
class MonteCarlo:
    """Monte Carlo evaluation mode: fresh inner draws per evaluation point."""

    rng: object
    m: int = 2000

    def __post_init__(self):
        if self.m < 100:
            raise ValueError(f"Monte Carlo needs m >= 100 inner draws, got {self.m}")
        self.rng = as_generator(self.rng)


def _require_finite(space: Space, what: str):
    if space.kind != FINITE:
        raise ValueError(f"{what} in exact mode needs a finite space")


# -- plain evaluation ------------------------------------------------------


def _subset_index(n: int, p: int) -> np.ndarray:
    """Index array of all p-subsets of range(n), shape (C(n,p), p)."""
    if p == 0:
        return np.zeros((1, 0), dtype=np.intp)
    if n < p:
        return np.zeros((0, p), dtype=np.intp)
    if p == 1:
        return np.arange(n, dtype=np.intp)[:, None]
    if p == 2:
        iu = np.triu_indices(n, k=1)
        return np.stack([iu[0], iu[1]], axis=1).astype(np.intp)
    return np.array(list(combinations(range(n), p)), dtype=np.intp)


def eval_ustat(kernel: Kernel, prefix: np.ndarray, n_param: Optional[int] = None) -> float:
    """Sum of kernel values over all p-subsets of the prefix.

    Prefixes shorter than the kernel order contribute the empty sum, 0.
    """
    prefix = np.asarray(prefix)
    m = len(prefix)
    p = kernel.order
    if m < p:
        return 0.0
    if p == 0:
        return float(kernel(n=n_param))
    idx = _subset_index(m, p)
    vals = kernel(*(prefix[idx[:, j]] for j in range(p)), n=n_param)
    return float(np.sum(vals))


@dataclass
class SequentialPath:
    """Cadlag step path of a statistic evaluated on sample prefixes.

    values[i] is the statistic on X_1..X_{floor(n * grid[i])}; prefixes
    shorter than the kernel order carry the value 0.
    """

    n: int
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.ndim != 1 or self.grid.shape != self.values.shape:
            raise ValueError("grid and values must be 1-d arrays of equal length")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid times must be strictly increasing")
        if self.grid[0] < 0 or self.grid[-1] > 1:
            raise ValueError("grid times must lie in [0, 1]")

    @property
    def prefix_sizes(self) -> np.ndarray:
        return np.floor(self.n * self.grid + 1e-12).astype(int)


def default_grid(n: int, limit: int = DOWNSAMPLE_LIMIT) -> np.ndarray:
    """Grid t_j = j/n for every insertion, thinned to at most `limit` points."""
    js = np.arange(1, n + 1)
    if n > limit:
        keep = np.unique(np.linspace(1, n, limit).round().astype(int))
        js = keep
    return js / n


def prefix_ustat_values(kernel: Kernel, points: np.ndarray,
                        n_param: Optional[int] = None) -> np.ndarray:
    """J_p on every prefix of the sample, computed incrementally.

    Returns an array of length n+1 indexed by prefix size; total cost is of
    the same order as one from-scratch evaluation on the full sample.
    """
    points = np.asarray(points)
    n = len(points)
    p = kernel.order
    out = np.zeros(n + 1)
    if p == 0:
        out[:] = float(kernel(n=n_param))
        return out
    if n < p:
        return out
    if p == 1:
        out[1:] = np.cumsum(kernel(points, n=n_param))
        return out
    if p == 2:
        iu, ju = np.triu_indices(n, k=1)
        vals = kernel(points[iu], points[ju], n=n_param)
        # increment when inserting point j is the column sum over i < j
        col = np.bincount(ju, weights=vals, minlength=n)
        out[1:] = np.cumsum(col)
        return out
    for m in range(p, n + 1):
        new = m - 1  # 0-based index of the inserted point
        idx = _subset_index(new, p - 1)
        args = [points[idx[:, j]] for j in range(p - 1)]
        args.append(np.broadcast_to(points[new], idx.shape[:1] + points.shape[1:]))
        out[m] = out[m - 1] + float(np.sum(kernel(*args, n=n_param)))
    return out


def sequential_upath(kernel: Kernel, points: np.ndarray,
                     grid: Optional[np.ndarray] = None,
                     n_param: Optional[int] = None) -> SequentialPath:
    """The U-process path t -> J_p on the prefix X_1..X_{floor(nt)}."""
    points = np.asarray(points)
    n = len(points)
    if kernel.order > n:
        raise ValueError(f"kernel order {kernel.order} exceeds the sample size {n}")
    if n_param is None:
        n_param = n
    if grid is None:
        grid = default_grid(n)
    grid = np.asarray(grid, dtype=float)
    pref = prefix_ustat_values(kernel, points, n_param=n_param)
    sizes = np.floor(n * grid + 1e-12).astype(int)
    return SequentialPath(n=n, grid=grid, values=pref[sizes])


# -- Hoeffding decomposition ----------------------------------------------


def g_table(psi_table: np.ndarray, weights: np.ndarray, level: int) -> np.ndarray:
    """Integrate out trailing coordinates of a kernel table down to `level`."""
    p = psi_table.ndim
    if not 0 <= level <= p:
        raise ValueError(f"level must be in 0..{p}, got {level}")
    out = psi_table
    for _ in range(p - level):
        out = np.tensordot(out, weights, axes=([out.ndim - 1], [0]))
    return out


def psi_table_from_g(g_tables: Sequence[np.ndarray], k: int) -> np.ndarray:
    """Canonical component of order k via the alternating subset sum."""
    nat = g_tables[1].shape[0] if k > 0 else 1
    out = np.zeros((nat,) * k)
    for l in range(k + 1):
        sign = (-1.0) ** (k - l)
        gl = g_tables[l]
        for subset in combinations(range(k), l):
            view = gl
            if l > 0:
                # place g_l's axes at the subset positions, singletons elsewhere
                order = list(subset) + [ax for ax in range(k) if ax not in subset]
                expanded = np.reshape(gl, gl.shape + (1,) * (k - l))
                view = np.moveaxis(expanded, range(k), order)
            out = out + sign * view
    return out


def hoeffding_g_tables(kernel: Kernel, space: Space,
                       n: Optional[int] = None) -> list[np.ndarray]:
    """Exact tables of g_0..g_p on a finite space."""
    _require_finite(space, "hoeffding_g")
    t = kernel_table(kernel, space, n=n)
    return [g_table(t, space.weights, l) for l in range(kernel.order + 1)]


def hoeffding_psi_tables(kernel: Kernel, space: Space,
                         n: Optional[int] = None) -> list[np.ndarray]:
    """Exact tables of psi_0..psi_p on a finite space (psi_0 = g_0)."""
    gs = hoeffding_g_tables(kernel, space, n=n)
    return [psi_table_from_g(gs, k) for k in range(kernel.order + 1)]


def _mc_expand(ys, b, m):
    """Tile outer coordinates to shape (b*m, ...)."""
    out = []
    for y in ys:
        y = np.asarray(y)
        rep = np.repeat(y[:, None, ...], m, axis=1)
        out.append(rep.reshape((b * m,) + y.shape[1:]))
    return out


def hoeffding_g(kernel: Kernel, space: Space, level: int, mode,
                n: Optional[int] = None) -> Kernel:
    """g_level(y_1..y_level) = E[psi(y_1..y_level, X_1..X_{p-level})].

    Exact mode integrates by enumeration on finite spaces; Monte Carlo mode
    averages fresh inner draws per evaluation and records the worst standard
    error seen in kernel.meta["se_last"].
    """
    p = kernel.order
    if not 0 <= level <= p:
        raise ValueError(f"level must be in 0..{p}, got {level}")
    if level == p and mode == EXACT and space.kind != FINITE:
        return kernel
    if mode == EXACT:
        tables = hoeffding_g_tables(kernel, space, n=n)
        from .kernels import constant_kernel, table_kernel
        if level == 0:
            return constant_kernel(float(tables[0]))
        return table_kernel(tables[level], space, name=f"g{level}[{kernel.name}]",
                            symmetrize_check=False)
    if not isinstance(mode, MonteCarlo):
        raise ValueError(f"unknown mode {mode!r}")
    if level == p:
        return kernel
    gen, m = mode.rng, mode.m
    meta: dict = {}

    def fn(*ys, n=n):
        b = len(np.asarray(ys[0])) if ys else 1
        # fresh inner draws for every outer evaluation point, no reuse
        args = _mc_expand(ys, b, m) if ys else []
        args += [sample(space, b * m, gen) for _ in range(p - level)]
        vals = kernel(*args, n=n).reshape(b, m)
        meta["se_last"] = float(np.max(vals.std(axis=1, ddof=1))) / math.sqrt(m)
        return vals.mean(axis=1) if ys else np.float64(vals.mean())

    return Kernel(order=level, fn=fn, size_dependent=kernel.size_dependent,
                  name=f"g{level}~mc[{kernel.name}]", meta=meta)


def hoeffding_psi(kernel: Kernel, space: Space, level: int, mode,
                  n: Optional[int] = None) -> Kernel:
    """Canonical (degenerate) component of order `level`."""
    p = kernel.order
    if not 0 <= level <= p:
        raise ValueError(f"level must be in 0..{p}, got {level}")
    if mode == EXACT:
        from .kernels import constant_kernel, table_kernel
        tables = hoeffding_psi_tables(kernel, space, n=n)
        if level == 0:
            return constant_kernel(float(tables[0]))
        return table_kernel(tables[level], space, name=f"psi{level}[{kernel.name}]",
                            symmetrize_check=False)
    gs = [hoeffding_g(kernel, space, l, mode, n=n) for l in range(level + 1)]

    def fn(*xs, n=n):
        k = level
        b = len(np.asarray(xs[0])) if xs else 1
        out = np.zeros(b)
        for l in range(k + 1):
            sign = (-1.0) ** (k - l)
            for subset in combinations(range(k), l):
                if l == 0:
                    out += sign * float(gs[0](n=n))
                else:
                    out += sign * gs[l](*[xs[i] for i in subset], n=n)
        return out

    return Kernel(order=level, fn=fn, size_dependent=kernel.size_dependent,
                  name=f"psi{level}~mc[{kernel.name}]")


# -- variance and normalisation -------------------------------------------


def variance_sigma2(kernel: Kernel, space: Space, n: int, mode,
                    return_parts: bool = False):
    """Var(J_p on n points), evaluated through both closed forms.

    Returns (via_components, via_conditional_variances); the first sums the
    squared norms of the canonical components, the second the variances of
    the conditional-expectation kernels g_k.  In exact mode the two must
    agree to relative 1e-9.
    """
    p = kernel.order
    if n < p:
        raise ValueError(f"n = {n} is smaller than the kernel order {p}")
    if mode == EXACT:
        _require_finite(space, "variance_sigma2")
        w = space.weights
        gts = hoeffding_g_tables(kernel, space, n=n)
        psits = [psi_table_from_g(gts, k) for k in range(p + 1)]
        g0 = float(gts[0])
        psi_norms = [table_expect(t * t, w) if k else g0 * g0
                     for k, t in enumerate(psits)]
        g_vars = [table_expect(t * t, w) - g0 * g0 if k else 0.0
                  for k, t in enumerate(gts)]
    else:
        if not isinstance(mode, MonteCarlo):
            raise ValueError(f"unknown mode {mode!r}")
        psi_norms = [0.0] * (p + 1)
        g_vars = [0.0] * (p + 1)
        gen = mode.rng
        g0k = hoeffding_g(kernel, space, 0, MonteCarlo(gen, mode.m))
        g0 = float(g0k())
        for k in range(1, p + 1):
            psi_norms[k] = _mc_sq_norm(
                lambda mm: hoeffding_psi(kernel, space, k, MonteCarlo(gen, mm), n=n),
                space, k, mode, n)
            gk1 = hoeffding_g(kernel, space, k, MonteCarlo(gen, mode.m), n=n)
            gk2 = hoeffding_g(kernel, space, k, MonteCarlo(gen, mode.m), n=n)
            pts = [sample(space, mode.m, gen) for _ in range(k)]
            est = float(np.mean(gk1(*pts, n=n) * gk2(*pts, n=n))) - g0 * g0
            g_vars[k] = est
        for k in range(1, p + 1):
            if psi_norms[k] < 0 or g_vars[k] < 0:
                warnings.warn(f"negative variance estimate at level {k}; clamped to 0")
                psi_norms[k] = max(psi_norms[k], 0.0)
                g_vars[k] = max(g_vars[k], 0.0)

    v1 = sum(math.comb(n - k, p - k) ** 2 * math.comb(n, k) * psi_norms[k]
             for k in range(1, p + 1))
    v2 = math.comb(n, p) * sum(math.comb(p, k) * math.comb(n - p, p - k) * g_vars[k]
                               for k in range(1, p + 1))
    if mode == EXACT and v1 + v2 > 0 and abs(v1 - v2) > 1e-9 * max(abs(v1), abs(v2)):
        raise AssertionError(f"variance displays disagree: {v1!r} vs {v2!r}")
    if return_parts:
        return v1, v2, psi_norms, g_vars
    return v1, v2


def _mc_sq_norm(make_kernel, space: Space, order: int, mode: MonteCarlo, n) -> float:
    """Unbiased MC estimate of a squared L2 norm via two independent inner replicas."""
    k1 = make_kernel(mode.m)
    k2 = make_kernel(mode.m)
    pts = [sample(space, mode.m, mode.rng) for _ in range(order)]
    return float(np.mean(k1(*pts, n=n) * k2(*pts, n=n)))


def normalize_path(path: SequentialPath, kernel: Kernel, space: Space, mode,
                   n_param: Optional[int] = None,
                   g0: Optional[float] = None,
                   sigma2: Optional[float] = None) -> SequentialPath:
    """W(t) = (U(t) - E[U(t)]) / sigma_n with E[U(t)] = C(floor(nt), p) g_0."""
    p = kernel.order
    n = path.n if n_param is None else n_param
    if g0 is None:
        if mode == EXACT:
            _require_finite(space, "normalize_path")
            g0 = float(hoeffding_g_tables(kernel, space, n=n)[0])
        else:
            g0 = float(hoeffding_g(kernel, space, 0, mode, n=n)())
    if sigma2 is None:
        sigma2 = variance_sigma2(kernel, space, n, mode)[0]
    if sigma2 <= 0:
        raise ValueError("vanishing variance: sigma_n^2 = 0, cannot normalise")
    sizes = path.prefix_sizes
    mean = np.array([math.comb(int(m), p) * g0 for m in sizes])
    return SequentialPath(n=path.n, grid=path.grid,
                          values=(path.values - mean) / math.sqrt(sigma2))


def check_degeneracy(kernel: Kernel, space: Space, mode,
                     n: Optional[int] = None, probes: int = 64) -> float:
    """Worst |E[psi(x_1..x_{p-1}, X)]| over probe points; 0 iff canonical."""
    p = kernel.order
    if p == 0:
        return abs(float(kernel(n=n)))
    if mode == EXACT:
        _require_finite(space, "check_degeneracy")
        t = kernel_table(kernel, space, n=n)
        h = np.tensordot(t, space.weights, axes=([p - 1], [0]))
        return float(np.max(np.abs(h))) if p > 1 else float(abs(h))
    if not isinstance(mode, MonteCarlo):
        raise ValueError(f"unknown mode {mode!r}")
    gen = mode.rng
    ys = [sample(space, probes, gen) for _ in range(p - 1)]
    args = _mc_expand(ys, probes, mode.m) if p > 1 else []
    z = sample(space, probes * mode.m, gen)
    vals = kernel(*args, z, n=n).reshape(probes, mode.m)
    return float(np.max(np.abs(vals.mean(axis=1))))
