"""Limit laws of the normalised U-processes and tools to test against them.

Covariance functions in closed form (time-changed Brownian motions and their
mixtures, the changepoint limit, the Brownian bridge, the thermodynamic-regime
mixture for subgraph counts), a Cholesky grid sampler, Kolmogorov-Smirnov
utilities, empirical covariances with batch standard errors, and the
fourth-moment increment diagnostic used as a tightness proxy.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .rng import as_generator

PSD_EIG_TOL = -1e-9
CHOL_RIDGE = 1e-12
SE_BATCHES = 20


# -- covariance functions ----------------------------------------------------


def gamma_cov(p: int, alpha_sq: Sequence[float], s, t):
    """Covariance of the weighted sum of time-changed Brownian motions.

    alpha_sq[k-1] weights the component with covariance
    (s ^ t)^p (s v t)^(p-k), k = 1..p.
    """
    if len(alpha_sq) != p:
        raise ValueError(f"need {p} weights, got {len(alpha_sq)}")
    s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
    lo, hi = np.minimum(s, t), np.maximum(s, t)
    out = np.zeros(np.broadcast(s, t).shape)
    for k in range(1, p + 1):
        out = out + alpha_sq[k - 1] * lo**p * hi ** (p - k)
    return out if out.shape else float(out)


def a_process_cov(s, t):
    """Covariance of (1-t)B(t) + t(B(1)-B(t)) for a standard Brownian motion B."""
    s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
    lo, hi = np.minimum(s, t), np.maximum(s, t)
    out = ((1 - 2 * lo) * (1 - 2 * hi) * lo + (1 - 2 * lo) * hi * lo
           + lo * (1 - 2 * hi) * hi + lo * hi)
    return out if out.shape else float(out)


def bridge_cov(s, t):
    """Standard Brownian bridge covariance s ^ t - s t."""
    s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
    out = np.minimum(s, t) - s * t
    return out if out.shape else float(out)


def psi_cov(rho: float, d_list: Sequence[float], nu: float, p: int, s, t):
    """Thermodynamic-regime limit covariance for subgraph-count processes.

    d_list[k-1] carries the k-th motif integral constant; the k = 1 term is
    corrected by nu^2.  Normalised so the value at (1, 1) is 1.
    """
    if len(d_list) != p:
        raise ValueError(f"need {p} constants, got {len(d_list)}")
    s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
    lo, hi = np.minimum(s, t), np.maximum(s, t)
    coeff = []
    for k in range(1, p + 1):
        dk = d_list[k - 1] - (nu**2 if k == 1 else 0.0)
        coeff.append(rho ** (2 * p - k - 1) * dk
                     / (math.factorial(k) * math.factorial(p - k) ** 2))
    total = sum(coeff)
    if total <= 0:
        raise ValueError("normalising constant is not positive")
    out = np.zeros(np.broadcast(s, t).shape)
    for k in range(1, p + 1):
        out = out + coeff[k - 1] * lo**p * hi ** (p - k)
    out = out / total
    return out if out.shape else float(out)


@dataclass(frozen=True)
class LimitSpec:
    """A named limit law, reduced to its covariance function on [0,1]^2.

    variants:
      general(p, alpha_sq)    weighted sum of time-changed Brownian motions
      time_changed_bm(p)      B(t^p)
      changepoint_a           (1-t)B(t) + t(B(1)-B(t))
      brownian_bridge         standard bridge
      mixture(c1, c2)         c1 * A + c2 * bridge, independent components
      rgg_case(case, params)  per-case subgraph-count limit
    """

    variant: str
    p: int = 1
    alpha_sq: tuple = ()
    c1: float = 0.0
    c2: float = 0.0
    case: str = ""
    params: dict = field(default_factory=dict)

    def cov(self, s, t):
        if self.variant == "general":
            return gamma_cov(self.p, self.alpha_sq, s, t)
        if self.variant == "time_changed_bm":
            alpha = [0.0] * self.p
            alpha[-1] = 1.0
            return gamma_cov(self.p, alpha, s, t)
        if self.variant == "changepoint_a":
            return a_process_cov(s, t)
        if self.variant == "brownian_bridge":
            return bridge_cov(s, t)
        if self.variant == "mixture":
            return self.c1**2 * a_process_cov(s, t) + self.c2**2 * bridge_cov(s, t)
        if self.variant == "rgg_case":
            from .rgg import limit_cov_rgg
            return limit_cov_rgg(self.case, self.p, s, t, **self.params)
        raise ValueError(f"unknown limit variant {self.variant!r}")

    def cov_matrix(self, grid) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        return np.asarray(self.cov(grid[:, None], grid[None, :]))


def simulate_gaussian(spec, grid, replicates: int, rng) -> np.ndarray:
    """Sample centred Gaussian paths on the grid via Cholesky factorisation.

    spec is a LimitSpec or a bare covariance function (s, t) -> cov.  The
    grid covariance must be positive semidefinite up to -1e-9; a ridge of
    1e-12 is added before factorising.  Returns an array (replicates, len(grid)).
    """
    grid = np.asarray(grid, dtype=float)
    if callable(getattr(spec, "cov", None)):
        cov = spec.cov_matrix(grid) if hasattr(spec, "cov_matrix") else \
            np.asarray(spec.cov(grid[:, None], grid[None, :]))
    else:
        cov = np.asarray(spec(grid[:, None], grid[None, :]))
    cov = np.asarray(cov, dtype=float)
    eig = np.linalg.eigvalsh(cov)
    if eig.min() < PSD_EIG_TOL:
        raise ValueError(
            f"covariance is not positive semidefinite on this grid: "
            f"minimum eigenvalue {eig.min():.3e}")
    try:
        chol = np.linalg.cholesky(cov + CHOL_RIDGE * np.eye(len(grid)))
    except np.linalg.LinAlgError:
        raise ValueError(
            f"covariance not factorisable even with ridge {CHOL_RIDGE:g}; "
            f"minimum eigenvalue {eig.min():.3e}")
    gen = as_generator(rng)
    z = gen.standard_normal((replicates, len(grid)))
    return z @ chol.T


# -- Kolmogorov-Smirnov ------------------------------------------------------


def kolmogorov_cdf(x: float) -> float:
    """CDF of the Kolmogorov law (the law of sup |bridge|).

    Alternating series 1 - 2 sum_k (-1)^(k-1) exp(-2 k^2 x^2), truncated once
    terms drop below 1e-12.
    """
    if x <= 0:
        return 0.0
    total = 0.0
    for k in range(1, 10_000):
        term = math.exp(-2.0 * k * k * x * x)
        if term < 1e-12:
            break
        total += (-1.0) ** (k - 1) * term
    return min(max(1.0 - 2.0 * total, 0.0), 1.0)


def bridge_max_cdf(x: float) -> float:
    """CDF of the one-sided maximum of a standard Brownian bridge."""
    if x <= 0:
        return 0.0
    return 1.0 - math.exp(-2.0 * x * x)


def ks_statistic(samples: np.ndarray, cdf: Callable[[float], float]) -> float:
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    f = np.array([cdf(v) for v in x])
    upper = np.max(np.arange(1, n + 1) / n - f)
    lower = np.max(f - np.arange(0, n) / n)
    return float(max(upper, lower))


def ks_test(samples, cdf) -> tuple:
    """One-sample Kolmogorov-Smirnov test with the asymptotic p-value."""
    samples = np.asarray(samples, dtype=float)
    if len(samples) < 100:
        raise ValueError(f"ks_test needs at least 100 samples, got {len(samples)}")
    d = ks_statistic(samples, cdf)
    p = 1.0 - kolmogorov_cdf(math.sqrt(len(samples)) * d)
    return d, p


# -- empirical moments -------------------------------------------------------


def empirical_cov(ensemble: np.ndarray, batches: int = SE_BATCHES) -> tuple:
    """Raw cross-moment matrix E[W(s) W(t)] with batch standard errors.

    The processes are centred by construction, so no mean is subtracted.
    Returns (cov, se) of shapes (T, T).
    """
    w = np.asarray(ensemble, dtype=float)
    if w.ndim != 2:
        raise ValueError("ensemble must have shape (replicates, grid)")
    r = w.shape[0]
    cov = w.T @ w / r
    nb = min(batches, r)
    parts = np.array_split(np.arange(r), nb)
    bm = np.stack([w[idx].T @ w[idx] / len(idx) for idx in parts])
    se = bm.std(axis=0, ddof=1) / math.sqrt(nb)
    return cov, se


def max_cov_deviation(ensemble, grid, target_cov) -> dict:
    """Worst |empirical - target| covariance entry over the grid."""
    grid = np.asarray(grid, dtype=float)
    emp, se = empirical_cov(ensemble)
    tgt = np.asarray(target_cov(grid[:, None], grid[None, :]))
    dev = np.abs(emp - tgt)
    i, j = np.unravel_index(np.argmax(dev), dev.shape)
    return {"max_abs_dev": float(dev[i, j]), "at": (float(grid[i]), float(grid[j])),
            "empirical": emp, "target": tgt, "se": se}


@dataclass
class IncrementFit:
    constant: float
    exponent: float
    ci: tuple
    beta: float
    degenerate: bool = False


def increment_moment_diag(ensemble: np.ndarray, grid, pairs=None,
                          beta: float = 4.0, n: Optional[int] = None) -> IncrementFit:
    """Fit E|W(t) - W(s)|^beta against the prefix-fraction gap on a log scale.

    The gap is (floor(nt) - floor(ns)) / n when the prefix size n is known,
    else t - s.  A fitted exponent above 1 is the desk-scale signature of a
    tight family with continuous limit; beta defaults to 4 to mirror the
    fourth-moment bound that drives tightness proofs.
    """
    w = np.asarray(ensemble, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if pairs is None:
        pairs = [(i, j) for i in range(len(grid)) for j in range(i + 1, len(grid))]
    else:
        gi = {round(g, 12): i for i, g in enumerate(grid)}
        pairs = [(gi[round(s, 12)], gi[round(t, 12)]) for s, t in pairs]
    xs, ys = [], []
    for i, j in pairs:
        if n is not None:
            gap = (math.floor(n * grid[j] + 1e-12) - math.floor(n * grid[i] + 1e-12)) / n
        else:
            gap = grid[j] - grid[i]
        if gap <= 0:
            continue
        mom = float(np.mean(np.abs(w[:, j] - w[:, i]) ** beta))
        xs.append(gap)
        ys.append(mom)
    xs, ys = np.asarray(xs), np.asarray(ys)
    if np.all(ys < 1e-300):
        return IncrementFit(0.0, 0.0, (math.nan, math.nan), beta, degenerate=True)
    from .conditions import fit_rate
    fit = fit_rate(xs, np.maximum(ys, 1e-300))
    return IncrementFit(math.exp(fit.intercept), fit.slope, fit.ci, beta,
                        degenerate=fit.degenerate)
