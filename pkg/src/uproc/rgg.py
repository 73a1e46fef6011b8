"""Random geometric graphs: motif counting, scaling regimes, and limits.

Vertices are sample points; two vertices are adjacent iff their distance lies
strictly between 0 and the radius (coincident points are never adjacent).
Induced-subgraph counts of a fixed connected motif are symmetric U-statistics
whose sequential paths, variance scalings, and Gaussian limits are assembled
here, together with the cross-block edge statistic used for changepoint
detection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations, permutations
from typing import Callable, Optional, Sequence

import numpy as np

from .kernels import Kernel
from .rng import as_generator
from .spaces import CUBE, Space, sample
from .ustat import SequentialPath, default_grid


# -- motifs -------------------------------------------------------------------


def _pair_bit(i: int, j: int, p: int) -> int:
    """Bit position of the unordered pair (i < j) in lexicographic order."""
    if i > j:
        i, j = j, i
    return sum(p - 1 - a for a in range(i)) + (j - i - 1)


@dataclass(frozen=True)
class Motif:
    """A fixed connected graph on p vertices (2 <= p <= 4).

    Stored canonically as the lexicographic minimum of the packed
    upper-triangular adjacency bits over all vertex relabelings.
    """

    p: int
    edges: tuple  # sorted tuple of sorted pairs
    name: str = ""

    def __post_init__(self):
        if not 2 <= self.p <= 4:
            raise ValueError("motifs support 2 to 4 vertices")
        edges = tuple(sorted(tuple(sorted(e)) for e in self.edges))
        for i, j in edges:
            if not (0 <= i < j < self.p):
                raise ValueError(f"edge {(i, j)} out of range for p={self.p}")
        if len(set(edges)) != len(edges):
            raise ValueError("duplicate edges")
        object.__setattr__(self, "edges", edges)
        if not self._connected():
            raise ValueError("motif must be connected")

    def _connected(self) -> bool:
        seen = {0}
        frontier = [0]
        adj = {v: set() for v in range(self.p)}
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        while frontier:
            v = frontier.pop()
            for u in adj[v]:
                if u not in seen:
                    seen.add(u)
                    frontier.append(u)
        return len(seen) == self.p

    def code(self) -> int:
        return sum(1 << _pair_bit(i, j, self.p) for i, j in self.edges)

    def canonical_code(self) -> int:
        return min(self._relabelled_code(perm)
                   for perm in permutations(range(self.p)))

    def _relabelled_code(self, perm) -> int:
        return sum(1 << _pair_bit(perm[i], perm[j], self.p)
                   for i, j in self.edges)

    def iso_code_lut(self) -> np.ndarray:
        """Boolean lookup over all 2^C(p,2) adjacency codes: isomorphic or not."""
        lut = np.zeros(1 << (self.p * (self.p - 1) // 2), dtype=bool)
        for perm in permutations(range(self.p)):
            lut[self._relabelled_code(perm)] = True
        return lut


def edge_motif() -> Motif:
    return Motif(2, ((0, 1),), name="edge")


def path_motif(p: int) -> Motif:
    return Motif(p, tuple((i, i + 1) for i in range(p - 1)), name=f"path{p}")


def triangle_motif() -> Motif:
    return Motif(3, ((0, 1), (1, 2), (0, 2)), name="triangle")


def complete_motif(p: int) -> Motif:
    return Motif(p, tuple(combinations(range(p), 2)), name=f"complete{p}")


def star_motif(p: int) -> Motif:
    return Motif(p, tuple((0, i) for i in range(1, p)), name=f"star{p}")


def motif_from_edge_list(p: int, edges, name: str = "custom") -> Motif:
    return Motif(p, tuple(tuple(e) for e in edges), name=name)


def _pair_dists(coords: Sequence[np.ndarray]):
    p = len(coords)
    for i in range(p):
        for j in range(i + 1, p):
            diff = np.asarray(coords[i], dtype=float) - np.asarray(coords[j], dtype=float)
            if diff.ndim > 1:
                yield i, j, np.linalg.norm(diff, axis=-1)
            else:
                yield i, j, np.abs(diff)


def motif_kernel(motif: Motif, radius) -> Kernel:
    """Indicator that the distance graph on p points is isomorphic to the motif.

    radius may be a constant or a callable n -> t_n, making the kernel
    size-dependent.  Edges use the strict rule 0 < distance < radius.
    """
    lut = motif.iso_code_lut()
    p = motif.p
    radius_fn = radius if callable(radius) else (lambda n: radius)

    def fn(*coords, n=None):
        t = float(radius_fn(n))
        code = np.zeros(np.asarray(coords[0]).shape[:1] or (), dtype=np.int64)
        for i, j, d in _pair_dists(coords):
            bit = ((d > 0) & (d < t)).astype(np.int64)
            code = code + (bit << _pair_bit(i, j, p))
        return lut[code].astype(float)

    return Kernel(order=p, fn=fn, size_dependent=callable(radius),
                  name=f"motif[{motif.name or motif.canonical_code()}]")


# -- geometric graph construction ---------------------------------------------


@dataclass
class GeometricGraphInstance:
    """A built graph: points in sample order plus CSR adjacency."""

    points: np.ndarray
    radius: float
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def edge_count(self) -> int:
        return len(self.indices) // 2

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]


def build_graph(points: np.ndarray, radius: float) -> GeometricGraphInstance:
    """Neighbor search via uniform grid buckets of side = radius.

    Expected cost O(n * average degree): each point is compared only against
    points in its own and adjacent buckets.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n, d = pts.shape
    cells = np.floor(pts / radius).astype(np.int64)
    buckets: dict = {}
    for i in range(n):
        buckets.setdefault(tuple(cells[i]), []).append(i)
    buckets = {c: np.asarray(v, dtype=np.intp) for c, v in buckets.items()}
    # lexicographic half-space of offsets avoids double-counting cell pairs
    offsets = [tuple(x - 1 for x in off) for off in np.ndindex(*(3,) * d)
               if tuple(x - 1 for x in off) > (0,) * d]
    pairs_i, pairs_j = [], []
    for cell, mine in buckets.items():
        if len(mine) > 1:
            ii, jj = np.triu_indices(len(mine), k=1)
            pairs_i.append(mine[ii])
            pairs_j.append(mine[jj])
        for off in offsets:
            other = buckets.get(tuple(np.asarray(cell) + off))
            if other is not None:
                gi, gj = np.meshgrid(mine, other, indexing="ij")
                pairs_i.append(gi.ravel())
                pairs_j.append(gj.ravel())
    if pairs_i:
        ii = np.concatenate(pairs_i)
        jj = np.concatenate(pairs_j)
        dist = np.linalg.norm(pts[ii] - pts[jj], axis=1)
        keep = (dist > 0) & (dist < radius)
        ii, jj = ii[keep], jj[keep]
    else:
        ii = jj = np.zeros(0, dtype=np.intp)
    deg = np.bincount(np.concatenate([ii, jj]), minlength=n)
    indptr = np.zeros(n + 1, dtype=np.intp)
    np.cumsum(deg, out=indptr[1:])
    indices = np.empty(indptr[-1], dtype=np.intp)
    fill = indptr[:-1].copy()
    for a, b in ((ii, jj), (jj, ii)):
        for u, v in zip(a, b):
            indices[fill[u]] = v
            fill[u] += 1
    for v in range(n):
        indices[indptr[v]:indptr[v + 1]].sort()
    return GeometricGraphInstance(points=pts, radius=float(radius),
                                  indptr=indptr, indices=indices)


def brute_force_adjacency(points: np.ndarray, radius: float) -> np.ndarray:
    """Quadratic oracle: boolean adjacency matrix."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    return (dist > 0) & (dist < radius)


# -- sequential motif counting ---------------------------------------------------


def count_motifs_sequential(g: GeometricGraphInstance, motif: Motif,
                            grid: Optional[np.ndarray] = None) -> SequentialPath:
    """Induced-motif counts on vertex prefixes, by incremental insertion.

    Inserting vertex v adds counts of (p-1)-subsets of earlier vertices within
    graph distance p-1 of v; the final value matches the brute-force count
    over all p-subsets.
    """
    p = motif.p
    if p > 4:
        raise ValueError("sequential counting is guarded to motifs on <= 4 vertices")
    n = g.n
    if grid is None:
        grid = default_grid(n)
    lut = motif.iso_code_lut()
    increments = np.zeros(n + 1)
    if p == 2:
        want = bool(lut[1])
        for v in range(n):
            nb = g.neighbors(v)
            increments[v + 1] = np.sum(nb < v) if want else 0.0
    else:
        pts = g.points
        for v in range(1, n):
            ball = _earlier_ball(g, v, p - 1)
            if len(ball) < p - 1:
                continue
            subs = np.array(list(combinations(ball, p - 1)), dtype=np.intp)
            tuples = [pts[subs[:, j]] for j in range(p - 1)] + \
                     [np.broadcast_to(pts[v], (len(subs),) + pts.shape[1:])]
            code = np.zeros(len(subs), dtype=np.int64)
            for i, j, dist in _pair_dists(tuples):
                bit = ((dist > 0) & (dist < g.radius)).astype(np.int64)
                code += bit << _pair_bit(i, j, p)
            increments[v + 1] = float(lut[code].sum())
    values = np.cumsum(increments)
    sizes = np.floor(n * np.asarray(grid) + 1e-12).astype(int)
    return SequentialPath(n=n, grid=np.asarray(grid, dtype=float),
                          values=values[sizes])


def _earlier_ball(g: GeometricGraphInstance, v: int, hops: int) -> np.ndarray:
    """Vertices with index < v within `hops` graph steps of v, using only
    vertices of index <= v along the way."""
    seen = {v}
    frontier = [v]
    for _ in range(hops):
        nxt = []
        for u in frontier:
            for w in g.neighbors(u):
                if w <= v and w not in seen:
                    seen.add(w)
                    nxt.append(w)
        frontier = nxt
        if not frontier:
            break
    seen.discard(v)
    return np.array(sorted(seen), dtype=np.intp)


def brute_force_motif_count(points: np.ndarray, motif: Motif, radius: float) -> float:
    """Loop over all p-subsets (the oracle for the incremental counter)."""
    kern = motif_kernel(motif, radius)
    from .ustat import eval_ustat
    return eval_ustat(kern, np.asarray(points))


# -- regime classification and limit constants ----------------------------------


@dataclass
class RegimeParams:
    case: str  # C1 | C2 | C3 | C4
    rho: Optional[float] = None
    lam: Optional[float] = None
    window_ok: Optional[bool] = None
    slope: float = 0.0
    notes: list = field(default_factory=list)


def classify_regime(n_grid: Sequence[int], t_rule: Callable[[int], float],
                    d: int, p: int, mu_uniform: bool,
                    slope_tol: float = 0.1) -> RegimeParams:
    """Classify the scaling window of n * t_n^d along the grid.

    The sparse case additionally checks the counting window
    n^(-p/(p-1)) << t_n^d << 1/n, the dense-uniform case t_n^d << n^(-1/2).
    """
    from .conditions import fit_rate
    n_grid = [int(n) for n in n_grid]
    xs = np.array([n * t_rule(n) ** d for n in n_grid])
    fit = fit_rate(n_grid, xs)
    td_fit = fit_rate(n_grid, [t_rule(n) ** d for n in n_grid])
    if fit.slope < -slope_tol:
        window = (-p / (p - 1) < td_fit.slope < -1)
        out = RegimeParams(case="C1", window_ok=window, slope=fit.slope)
        if not window:
            out.notes.append(
                f"t_n^d exponent {td_fit.slope:.3f} outside (-p/(p-1), -1)")
        return out
    if fit.slope > slope_tol:
        if mu_uniform:
            window = (-1 < td_fit.slope < -0.5)
            out = RegimeParams(case="C2", window_ok=window, slope=fit.slope)
            if not window:
                out.notes.append(
                    f"t_n^d exponent {td_fit.slope:.3f} outside (-1, -1/2)")
            return out
        return RegimeParams(case="C3", window_ok=True, slope=fit.slope)
    rho = float(np.exp(np.mean(np.log(xs))))
    out = RegimeParams(case="C4", rho=rho, window_ok=True, slope=fit.slope)
    if xs.max() > 1.25 * xs.min():
        out.notes.append("n t_n^d drifts; thermodynamic constant is approximate")
    return out


def lambda_dense_uniform(n: int, t_n: float, d: int, p: int,
                         var_g1: float, d2: float) -> float:
    """Finite-n value of the dense-uniform mixing ratio."""
    num = n ** (2 * p - 1) * var_g1 / math.factorial(p - 1) ** 2
    den = d2 * n ** (2 * p - 2) * (t_n ** d) ** (2 * p - 3) \
        / (2 * math.factorial(p - 2) ** 2)
    if den <= 0:
        return math.inf
    return num / den


def var_g1_mc(space: Space, motif: Motif, t_n: float, rng,
              m_outer: int = 4000, m_inner: int = 2000) -> float:
    """Unbiased MC estimate of Var(g_1) for the motif kernel at radius t_n.

    Two conditionally independent inner replicas give an unbiased estimate of
    E[g_1^2]; the mean is estimated from a fresh replica.
    """
    from .ustat import MonteCarlo, hoeffding_g
    gen = as_generator(rng)
    kern = motif_kernel(motif, t_n)
    g1a = hoeffding_g(kern, space, 1, MonteCarlo(gen, m_inner))
    g1b = hoeffding_g(kern, space, 1, MonteCarlo(gen, m_inner))
    x = sample(space, m_outer, gen)
    e2 = float(np.mean(np.asarray(g1a(x)) * np.asarray(g1b(x))))
    y = sample(space, m_outer, gen)
    g0 = float(np.mean(np.asarray(g1a(y))))
    return max(e2 - g0 * g0, 0.0)


def predicted_variance(case: str, n: int, t_n: float, d: int, p: int,
                       d_list: Sequence[float], nu: float) -> float:
    """Leading-order variance of the full-sample motif count, by case."""
    td = t_n ** d
    if case == "C1":
        return d_list[p - 1] / math.factorial(p) * n ** p * td ** (p - 1)
    if case == "C2":  # a lower bound, not an equivalent
        return (d_list[1] / (2 * math.factorial(p - 2) ** 2)
                * n ** (2 * p - 2) * td ** (2 * p - 3))
    if case == "C3":
        return ((d_list[0] - nu ** 2) / math.factorial(p - 1) ** 2
                * n ** (2 * p - 1) * td ** (2 * p - 2))
    if case == "C4":
        rho = n * td
        c4 = sum(rho ** (2 * p - k - 1) * (d_list[k - 1] - (nu ** 2 if k == 1 else 0))
                 / (math.factorial(k) * math.factorial(p - k) ** 2)
                 for k in range(1, p + 1))
        return c4 * n
    raise ValueError(f"unknown case {case!r}")


def limit_cov_rgg(case: str, p: int, s, t, lam: Optional[float] = None,
                  rho: Optional[float] = None,
                  d_list: Optional[Sequence[float]] = None,
                  nu: Optional[float] = None):
    """Limit covariance of the normalised motif-count process, by case."""
    s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
    lo, hi = np.minimum(s, t), np.maximum(s, t)
    if case == "C1":
        out = lo ** p
    elif case == "C2":
        if lam is None:
            raise ValueError("case C2 needs the mixing ratio lambda")
        w1 = 1.0 / (1.0 + 1.0 / lam) if lam > 0 else 0.0
        w2 = 1.0 / (1.0 + lam) if not math.isinf(lam) else 0.0
        out = lo ** p * hi ** (p - 1) * w1 + lo ** p * hi ** (p - 2) * w2
    elif case == "C3":
        out = lo ** p * hi ** (p - 1)
    elif case == "C4":
        from .limits import psi_cov
        if rho is None or d_list is None or nu is None:
            raise ValueError("case C4 needs rho, the motif constants, and nu")
        return psi_cov(rho, d_list, nu, p, s, t)
    else:
        raise ValueError(f"unknown case {case!r}")
    return out if out.shape else float(out)


# -- motif integral constants -----------------------------------------------------


@dataclass
class DkNuEstimate:
    d_k: float
    d_k_se: float
    nu: float
    nu_se: float
    feasible: bool = True


def _density_power_integral(space: Space, m: int, budget: int, gen) -> float:
    """integral of f^m over the support = E_mu[f^(m-1)]."""
    if space.kind == CUBE:
        lo, hi = space.support_box[:, 0], space.support_box[:, 1]
        vol = float(np.prod(hi - lo))
        return vol ** (1 - m)
    if space.density is None:
        raise ValueError("motif constants need a Euclidean density")
    from .spaces import sample
    x = sample(space, budget, gen)
    return float(np.mean(np.asarray(space.density(x)) ** (m - 1)))


def estimate_dk_nu(space: Space, motif: Motif, k: int, budget: int, rng,
                   batches: int = 20) -> DkNuEstimate:
    """Monte Carlo motif-integral constants at unit radius.

    Inner coordinates are drawn uniformly from the box [-(p-1), p-1]^d that
    contains the reach of a connected motif; boundary effects vanish in these
    rescaled integrals, so small-sample bias relative to finite-radius counts
    is expected and reported upstream.
    """
    p = motif.p
    if not 1 <= k <= p:
        raise ValueError(f"need 1 <= k <= p, got k={k}")
    gen = as_generator(rng)
    d = space.dimension
    half = p - 1.0
    vol = (2 * half) ** d
    kern = motif_kernel(motif, 1.0)
    b = max(budget // batches, 100)

    def draw(count):
        return gen.uniform(-half, half, size=(count, d))

    zero = np.zeros((b, d))
    nu_vals, dk_vals = [], []
    for _ in range(batches):
        ys = [draw(b) for _ in range(p - 1)]
        nu_vals.append(vol ** (p - 1) * float(np.mean(kern(zero, *ys))))
        ws = [draw(b) for _ in range(k - 1)]
        zs = [draw(b) for _ in range(p - k)]
        vs = [draw(b) for _ in range(p - k)]
        left = kern(zero, *ws, *zs)
        right = kern(zero, *ws, *vs)
        dk_vals.append(vol ** (k - 1 + 2 * (p - k)) * float(np.mean(left * right)))
    nu_in = float(np.mean(nu_vals))
    nu_se_in = float(np.std(nu_vals, ddof=1) / math.sqrt(batches))
    dk_in = float(np.mean(dk_vals))
    dk_se_in = float(np.std(dk_vals, ddof=1) / math.sqrt(batches))
    f_p = _density_power_integral(space, p, budget, gen)
    f_2pk = _density_power_integral(space, 2 * p - k, budget, gen)
    nu = f_p * nu_in
    nu_se = f_p * nu_se_in
    feasible = not (nu <= 0 or nu - 3 * nu_se <= 0)
    return DkNuEstimate(d_k=f_2pk * dk_in, d_k_se=f_2pk * dk_se_in,
                        nu=nu, nu_se=nu_se, feasible=feasible)


# -- cross-block edge statistic ----------------------------------------------------


def cube_edge_probability(t: float, d: int) -> float:
    """P(0 < |X - Y| <= t) for X, Y uniform on the unit cube, d = 1 or 2."""
    if not 0 < t <= 1:
        raise ValueError("radius must lie in (0, 1]")
    if d == 1:
        return 2 * t - t * t
    if d == 2:
        return math.pi * t**2 - 8.0 / 3.0 * t**3 + 0.5 * t**4
    raise ValueError("closed form implemented for d = 1, 2 only")


@dataclass
class EdgeChangepointStat:
    path: SequentialPath  # T_n on the grid
    max_neg: float        # max over the grid of -T_n
    argmax: float         # smallest grid maximizer of -T_n
    eta: float
    sigma: float


def changepoint_edge_stat(g: GeometricGraphInstance, eta: float, sigma: float,
                          grid: Optional[np.ndarray] = None) -> EdgeChangepointStat:
    """Normalised cross-block edge counts with their max/argmax functionals.

    T(k) = (#edges with one endpoint in the first k points and the other
    beyond - eta * k * (n - k)) / sigma, evaluated at k = floor(n t) over the
    grid.  Computed in one pass over the edge list.
    """
    if sigma <= 0 or not math.isfinite(sigma):
        raise ValueError(f"degenerate normalisation sigma = {sigma!r}")
    n = g.n
    if grid is None:
        grid = np.arange(1, n + 1) / n
    grid = np.asarray(grid, dtype=float)
    lows, highs = [], []
    for v in range(n):
        nb = g.neighbors(v)
        highs.extend([v] * int(np.sum(nb < v)))
        lows.extend([v] * int(np.sum(nb > v)))
    # S(k) = #{edges i < j : i <= k < j}, 1-based k; lower endpoints enter,
    # upper endpoints leave
    enter = np.bincount(np.asarray(lows, dtype=int) + 1, minlength=n + 1)
    leave = np.bincount(np.asarray(highs, dtype=int) + 1, minlength=n + 1)
    s = np.cumsum(enter - leave)
    ks = np.floor(n * grid + 1e-12).astype(int)
    tvals = (s[ks] - eta * ks * (n - ks)) / sigma
    path = SequentialPath(n=n, grid=grid, values=tvals)
    neg = -tvals
    imax = int(np.argmax(neg))  # first index = smallest maximizer
    return EdgeChangepointStat(path=path, max_neg=float(neg[imax]),
                               argmax=float(grid[imax]), eta=eta, sigma=sigma)
