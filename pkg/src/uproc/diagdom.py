"""Order-2 U-statistics whose kernels concentrate near the diagonal.

Two projection-kernel families (Fourier truncation on [-pi, pi], dyadic
histogram on [0, 1]) whose squared norm k_n grows faster than n, the
partition-based sufficient conditions for their Gaussian limit, and the
simulation harness comparing the sequential process against Brownian motion
under the time change t^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .kernels import Kernel
from .rng import as_generator
from .spaces import Space, cube_uniform, sample
from .ustat import SequentialPath, default_grid, prefix_ustat_values


# -- quadrature ----------------------------------------------------------------


def simpson_refine(f, a: float, b: float, min_panels: int = 4096,
                   rel_tol: float = 1e-8, max_doublings: int = 10) -> float:
    """Composite Simpson, doubling panels until successive estimates agree."""
    if b <= a:
        return 0.0
    panels = max(min_panels, 2)
    prev = None
    for _ in range(max_doublings + 1):
        x = np.linspace(a, b, panels + 1)
        y = np.asarray(f(x), dtype=float)
        h = (b - a) / panels
        est = h / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum() + 2 * y[2:-2:2].sum())
        if prev is not None and abs(est - prev) <= rel_tol * max(abs(est), 1e-300):
            return float(est)
        prev = est
        panels *= 2
    return float(prev)


# -- kernels --------------------------------------------------------------------


def dirichlet_kernel(k: int) -> Kernel:
    """Fourier projection kernel sin((k+1/2)u) / (2 pi sin(u/2)), u = x - y.

    The removable singularities at u = 0 mod 2 pi evaluate to (2k+1)/(2 pi).
    """

    def fn(x, y):
        u = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        s = np.sin(u / 2)
        near = np.abs(s) < 1e-9
        s_safe = np.where(near, 1.0, s)
        val = np.sin((k + 0.5) * u) / (2 * np.pi * s_safe)
        return np.where(near, (2 * k + 1) / (2 * np.pi), val)

    return Kernel(order=2, fn=fn, name=f"dirichlet[{k}]")


def haar_kernel(levels: int) -> Kernel:
    """Projection onto dyadic cells of width 2^-levels on [0, 1].

    Summing the father function and all detail levels below `levels`
    telescopes to 2^levels on the diagonal cells and 0 elsewhere.
    """
    cells = 1 << levels

    def fn(x, y):
        cx = np.minimum((np.asarray(x, dtype=float) * cells).astype(int), cells - 1)
        cy = np.minimum((np.asarray(y, dtype=float) * cells).astype(int), cells - 1)
        return np.where(cx == cy, float(cells), 0.0)

    return Kernel(order=2, fn=fn, name=f"haar[{levels}]")


def haar_basis_kernel(levels: int) -> Kernel:
    """Direct basis summation (father + mother wavelets); oracle for haar_kernel."""

    def mother(u):
        u = np.asarray(u, dtype=float)
        return np.where((u >= 0) & (u < 0.5), 1.0,
                        np.where((u >= 0.5) & (u < 1.0), -1.0, 0.0))

    def fn(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        total = np.ones(np.broadcast(x, y).shape)  # father: 1_[0,1] x 1_[0,1]
        for i in range(levels):
            for j in range(1 << i):
                ps = 2 ** (i / 2) * mother(2**i * x - j)
                qs = 2 ** (i / 2) * mother(2**i * y - j)
                total = total + ps * qs
        return total

    return Kernel(order=2, fn=fn, name=f"haar_basis[{levels}]")


# -- families --------------------------------------------------------------------


@dataclass
class Partition:
    """Measurable cells with their masses and within-cell energy.

    within_k2[m] = integral of K^2 over cell_m x cell_m against mu x mu.
    """

    measures: np.ndarray
    within_k2: np.ndarray
    boundaries: Optional[np.ndarray] = None

    @property
    def count(self) -> int:
        return len(self.measures)


class DirichletFamily:
    """Fourier kernels on the uniform law over [-pi, pi].

    The truncation index follows k(n) = ceil(n^k_exponent); cells are equal
    intervals of width 2 pi / ceil(n^delta_exponent).
    """

    def __init__(self, k_exponent: float = 1.5, delta_exponent: float = 0.625):
        self.k_exponent = k_exponent
        self.delta_exponent = delta_exponent
        self.space = cube_uniform(1, box=[[-math.pi, math.pi]])
        self.op_norm_exact = 1.0 / (2 * math.pi)

    def param(self, n: int) -> int:
        return math.ceil(n ** self.k_exponent)

    def resolution(self, n: int) -> int:
        return 2 * self.param(n) + 1

    def kernel(self, n: int) -> Kernel:
        return dirichlet_kernel(self.param(n))

    def k_n(self, n: int) -> float:
        # spectral count: the squared norm under the uniform law
        return (2 * self.param(n) + 1) / (4 * math.pi**2)

    def k_n_quadrature(self, n: int) -> float:
        k = self.param(n)
        kern = dirichlet_kernel(k)

        def f(u):
            zero = np.zeros_like(u)
            return 2 * (2 * math.pi - u) * kern(u, zero) ** 2

        panels = max(4096, 16 * k)
        return simpson_refine(f, 0.0, 2 * math.pi, min_panels=panels) / (4 * math.pi**2)

    def g0(self, n: int) -> float:
        return 1.0 / (2 * math.pi)

    def psi_norms_sq(self, n: int):
        # the linear component vanishes under the uniform law
        return 0.0, self.k_n(n) - self.g0(n) ** 2

    def sigma_sq(self, n: int) -> float:
        psi1, psi2 = self.psi_norms_sq(n)
        return (n - 1) ** 2 * n * psi1 + math.comb(n, 2) * psi2

    def partition(self, n: int) -> Partition:
        m_cells = math.ceil(n ** self.delta_exponent)
        delta = 2 * math.pi / m_cells
        k = self.param(n)
        kern = dirichlet_kernel(k)

        def f(u):
            zero = np.zeros_like(u)
            return 2 * (delta - u) * kern(u, zero) ** 2

        panels = max(4096, max(16, int(16 * k * delta / math.pi)))
        within = simpson_refine(f, 0.0, delta, min_panels=panels) / (4 * math.pi**2)
        bounds = np.linspace(-math.pi, math.pi, m_cells + 1)
        return Partition(measures=np.full(m_cells, 1.0 / m_cells),
                         within_k2=np.full(m_cells, within),
                         boundaries=bounds)

    def offdiag_tail(self, n: int, eps: float) -> float:
        """(1/k_n) integral of K^2 over |x - y| > eps (both coordinates folded)."""
        k = self.param(n)
        kern = dirichlet_kernel(k)

        def f(u):
            zero = np.zeros_like(u)
            return 2 * (2 * math.pi - u) * kern(u, zero) ** 2

        panels = max(4096, 16 * k)
        val = simpson_refine(f, eps, 2 * math.pi - eps, min_panels=panels)
        return val / (4 * math.pi**2) / self.k_n(n)

    def offdiag_variance_share(self, n: int, xpoints: int = 128) -> float:
        """Var of the off-block remainder's U-statistic relative to sigma^2.

        Splitting K into its within-block part and the rest, the remainder
        process is asymptotically negligible; this evaluates its exact
        variance formula with quadrature norms.  By translation invariance
        only the position within one cell matters for the linear part.
        """
        part = self.partition(n)
        kn = self.k_n(n)
        q1 = float(part.within_k2.sum()) / kn
        b_norm_sq = max(kn * (1.0 - q1), 0.0)
        delta = 2 * math.pi / part.count
        k = self.param(n)
        kern = dirichlet_kernel(k)
        us = (np.arange(xpoints) + 0.5) * delta / xpoints
        g1b = np.empty(xpoints)
        panels = max(512, int(16 * k * delta / math.pi))
        for i, u in enumerate(us):
            inner = simpson_refine(
                lambda y, u=u: kern(np.full_like(y, u), y), 0.0, delta,
                min_panels=panels)
            g1b[i] = 1.0 / (2 * math.pi) - inner / (2 * math.pi)
        g0b = float(g1b.mean())
        psi1b = float(np.mean((g1b - g0b) ** 2))
        psi2b = max(b_norm_sq - 2 * psi1b - g0b**2, 0.0)
        var_r = (n - 1) ** 2 * n * psi1b + math.comb(n, 2) * psi2b
        return var_r / self.sigma_sq(n)


class HaarFamily:
    """Dyadic histogram kernels on [0, 1], uniform or bounded perturbed law.

    The resolution follows levels(n) = ceil(k_exponent * log2 n), giving
    k_n = 2^levels ~ n^k_exponent; partition cells are blocks of adjacent
    dyadic cells with about sqrt(k_n) blocks.
    """

    def __init__(self, k_exponent: float = 1.5,
                 density: Optional[Callable] = None,
                 density_bounds: tuple = (0.5, 2.0)):
        self.k_exponent = k_exponent
        self.density = density
        if density is None:
            self.space = cube_uniform(1)
        else:
            from .spaces import euclidean_density
            self.space = euclidean_density(density, [[0.0, 1.0]],
                                           envelope=density_bounds[1])
        self._mass_cache: dict = {}

    def param(self, n: int) -> int:
        return math.ceil(self.k_exponent * math.log2(n))

    def resolution(self, n: int) -> int:
        return 1 << self.param(n)

    def kernel(self, n: int) -> Kernel:
        return haar_kernel(self.param(n))

    def cell_masses(self, n: int) -> np.ndarray:
        levels = self.param(n)
        if levels in self._mass_cache:
            return self._mass_cache[levels]
        cells = 1 << levels
        if self.density is None:
            out = np.full(cells, 1.0 / cells)
        else:
            out = np.empty(cells)
            for c in range(cells):
                out[c] = simpson_refine(self.density, c / cells, (c + 1) / cells,
                                        min_panels=64)
            out = out / out.sum()  # renormalise quadrature drift
        self._mass_cache[levels] = out
        return out

    def k_n(self, n: int) -> float:
        m = self.cell_masses(n)
        cells = len(m)
        return float(cells**2 * np.sum(m**2))

    def g0(self, n: int) -> float:
        m = self.cell_masses(n)
        return float(len(m) * np.sum(m**2))

    def psi_norms_sq(self, n: int):
        m = self.cell_masses(n)
        cells = len(m)
        g0 = self.g0(n)
        g1 = cells * m  # value of the conditional mean on each cell
        psi1 = float(np.sum(m * (g1 - g0) ** 2))
        psi2 = self.k_n(n) - 2 * psi1 - g0**2
        return psi1, psi2

    def sigma_sq(self, n: int) -> float:
        psi1, psi2 = self.psi_norms_sq(n)
        return (n - 1) ** 2 * n * psi1 + math.comb(n, 2) * psi2

    @property
    def op_norm_exact(self) -> float:
        return 1.0  # projection under the uniform law; recomputed per n below

    def op_norm(self, n: int) -> float:
        m = self.cell_masses(n)
        return float(len(m) * m.max())

    def partition(self, n: int) -> Partition:
        m = self.cell_masses(n)
        cells = len(m)
        levels = self.param(n)
        blocks = 1 << math.ceil(levels / 2)
        per = cells // blocks
        meas = m.reshape(blocks, per).sum(axis=1)
        within = (cells**2 * (m**2).reshape(blocks, per).sum(axis=1))
        bounds = np.arange(blocks + 1) * per / cells
        return Partition(measures=meas, within_k2=within, boundaries=bounds)

    def offdiag_tail(self, n: int, eps: float) -> float:
        return 0.0  # the kernel vanishes off the fine diagonal cells

    def offdiag_variance_share(self, n: int, xpoints: int = 128) -> float:
        return 0.0  # blocks contain whole diagonal cells, so the split is exact


# -- condition suites ---------------------------------------------------------------


@dataclass
class DiagConditionReport:
    n_grid: list
    series: dict           # label -> list of values
    verdicts: dict
    op_norms: dict
    notes: list = field(default_factory=list)


def check_partition_conditions(family, n_grid: Sequence[int],
                               power_iter_points: int = 512) -> DiagConditionReport:
    """The four partition conditions plus the operator-norm and variance scalings."""
    from .conditions import fit_rate, is_bounded_sequence
    n_grid = [int(n) for n in n_grid]
    series = {"sum_within_over_kn": [], "max_within_over_kn": [],
              "max_measure_kn_over_n": [], "n_min_measure": [],
              "kn_over_n": [], "sigma_ratio": []}
    for n in n_grid:
        part = family.partition(n)
        kn = family.k_n(n)
        series["sum_within_over_kn"].append(float(part.within_k2.sum()) / kn)
        series["max_within_over_kn"].append(float(part.within_k2.max()) / kn)
        series["max_measure_kn_over_n"].append(float(part.measures.max()) * kn / n)
        series["n_min_measure"].append(n * float(part.measures.min()))
        series["kn_over_n"].append(kn / n)
        series["sigma_ratio"].append(2 * family.sigma_sq(n) / (n**2 * kn))
    verdicts = {
        "within_sums_to_one": abs(series["sum_within_over_kn"][-1] - 1) < 0.2
        and series["sum_within_over_kn"][-1] >= series["sum_within_over_kn"][0] - 0.05,
        "max_within_vanishes": fit_rate(n_grid, series["max_within_over_kn"]).slope < 0,
        "measure_kn_vanishes": fit_rate(
            n_grid, series["max_measure_kn_over_n"]).slope < 0,
        "min_measure_liminf": min(series["n_min_measure"]) > 0
        and fit_rate(n_grid, series["n_min_measure"]).ci[1] >= 0,
        "kn_dominates_n": fit_rate(n_grid, series["kn_over_n"]).slope > 0,
        "sigma_ratio_to_one": abs(series["sigma_ratio"][-1] - 1) < 0.2,
    }
    # spot-check the analytic operator norm at an n whose kernel the
    # discretization can resolve (aliasing inflates it otherwise)
    spot_n = None
    for cand in [2 ** j for j in range(1, 16)]:
        if cand > max(n_grid):
            break
        if family.resolution(cand) <= 1024:
            spot_n = cand
    if spot_n is None:
        spot_n = 2
    points = max(power_iter_points, 4 * family.resolution(spot_n))
    op_norms = {"spot_n": spot_n}
    op_norms["power_iteration"] = _power_iteration_op_norm(
        family.kernel(spot_n), family.space, points)
    exact = family.op_norm(spot_n) if hasattr(family, "op_norm") \
        else family.op_norm_exact
    op_norms["exact"] = exact
    verdicts["op_norm_matches"] = abs(
        op_norms["power_iteration"] - exact) < 0.05 * max(exact, 1e-12)
    verdicts["all"] = all(verdicts.values())
    return DiagConditionReport(n_grid=n_grid, series=series, verdicts=verdicts,
                               op_norms=op_norms)


def _power_iteration_op_norm(kernel: Kernel, space: Space, points: int) -> float:
    lo, hi = space.support_box[:, 0], space.support_box[:, 1]
    x = np.linspace(float(lo[0]), float(hi[0]), points + 1)[:-1]
    x = x + (x[1] - x[0]) / 2
    w = np.full(points, 1.0 / points)
    if space.kind == "euclidean_density":
        f = np.asarray(space.density(x), dtype=float)
        w = f / f.sum()
    mat = kernel(np.repeat(x, points), np.tile(x, points)).reshape(points, points)
    sym = np.sqrt(w)[:, None] * mat * np.sqrt(w)[None, :]
    v = np.ones(points) / math.sqrt(points)
    lam = 0.0
    for _ in range(400):
        nv = sym @ v
        lam = float(np.linalg.norm(nv))
        if lam == 0:
            return 0.0
        v = nv / lam
    return lam


def check_functional_extras(family, n_grid: Sequence[int], eps1: float = 0.1,
                            eps2: float = 0.1, alpha1: float = 0.25,
                            alpha2: float = 0.25,
                            tail_eps: Optional[float] = None) -> DiagConditionReport:
    """The four extra conditions behind the functional (path-level) limit."""
    from .conditions import fit_rate, is_bounded_sequence
    n_grid = [int(n) for n in n_grid]
    series = {"measure_eps1": [], "measure_kn_eps2": [], "n_min_measure_eps2": [],
              "n_alpha1_over_kn": [], "offdiag_alpha2": []}
    for n in n_grid:
        part = family.partition(n)
        kn = family.k_n(n)
        series["measure_eps1"].append(n ** (0.5 + eps1) * float(part.measures.max()))
        series["measure_kn_eps2"].append(
            float(part.measures.max()) * kn / n ** (1 - eps2))
        series["n_min_measure_eps2"].append(
            n ** (1 - eps2) * float(part.measures.min()))
        series["n_alpha1_over_kn"].append(n ** (1 + alpha1) / kn)
        eps = tail_eps if tail_eps is not None else 1.0 / math.sqrt(kn) * 10
        series["offdiag_alpha2"].append(n**alpha2 * family.offdiag_tail(n, eps))
    verdicts = {
        "measure_eps1_bounded": is_bounded_sequence(n_grid, series["measure_eps1"]),
        "eps2_alternative": (
            is_bounded_sequence(n_grid, series["measure_kn_eps2"])
            or (min(series["n_min_measure_eps2"]) > 0
                and fit_rate(n_grid, series["n_min_measure_eps2"]).ci[1] >= 0)),
        "alpha1_bounded": is_bounded_sequence(n_grid, series["n_alpha1_over_kn"]),
        "offdiag_alpha2_bounded": is_bounded_sequence(
            n_grid, np.maximum(series["offdiag_alpha2"], 0.0)),
    }
    verdicts["all"] = all(verdicts.values())
    return DiagConditionReport(n_grid=n_grid, series=series, verdicts=verdicts,
                               op_norms={})


# -- simulation -------------------------------------------------------------------


@dataclass
class DiagFcltResult:
    grid: np.ndarray
    ensemble: np.ndarray
    sigma_sq: float
    k_n: float
    cov_dev: dict
    ks_marginal: tuple
    increment_fit: object


def simulate_diag_paths(family, n: int, replicates: int, grid, rng) -> np.ndarray:
    """Ensemble of normalised sequential paths W on the grid."""
    gen = as_generator(rng)
    grid = np.asarray(grid, dtype=float)
    kernel = family.kernel(n)
    g0 = family.g0(n)
    sigma = math.sqrt(family.sigma_sq(n))
    sizes = np.floor(n * grid + 1e-12).astype(int)
    means = np.array([math.comb(int(m), 2) * g0 for m in sizes])
    out = np.empty((replicates, len(grid)))
    for r in range(replicates):
        pts = sample(family.space, n, gen)
        pref = prefix_ustat_values(kernel, pts)
        out[r] = (pref[sizes] - means) / sigma
    return out


def run_diag_fclt(family, n: int, replicates: int, rng,
                  grid: Optional[np.ndarray] = None) -> DiagFcltResult:
    """Simulate the sequential process and compare with B(t^2)."""
    from .limits import increment_moment_diag, ks_test, max_cov_deviation
    from scipy.stats import norm
    if grid is None:
        grid = np.array([0.2, 0.4, 0.6, 0.8, 1.0])
    grid = np.asarray(grid, dtype=float)
    w = simulate_diag_paths(family, n, replicates, grid, rng)
    target = lambda s, t: np.minimum(s, t) ** 2
    dev = max_cov_deviation(w, grid, target)
    ks = ks_test(w[:, -1], norm.cdf)
    inc = increment_moment_diag(w, grid, beta=4.0, n=n)
    return DiagFcltResult(grid=grid, ensemble=w, sigma_sq=family.sigma_sq(n),
                          k_n=family.k_n(n), cov_dev=dev, ks_marginal=ks,
                          increment_fit=inc)
