"""Sufficient-condition checkers for Gaussian functional limits of U-processes.

Two checkers cover a general (possibly size-dependent) kernel family: one
works with the conditional-expectation kernels g_l, the other with the
canonical components psi_k.  A third covers the simpler degenerate case via
normalised self-contraction ratios.  Each evaluates its weighted contraction
norms over an n-grid, fits log-log decay rates, and reports trend verdicts;
finite grids cannot certify limits, so verdicts read "consistent with", not
"proves".
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats as sstats

from .contractions import ContractionIndex, contraction_norm, table_norm
from .kernels import Kernel, table_expect
from .spaces import FINITE, Space
from .ustat import (EXACT, MonteCarlo, check_degeneracy, hoeffding_g_tables,
                    psi_table_from_g, variance_sigma2)

EPS_GRID_DEFAULT = (0.1, 0.25, 0.5)
ZERO_FLOOR = 1e-300
#: sequences whose values never exceed this are treated as identically zero
ZERO_TOL = 1e-13


@dataclass(frozen=True)
class QuadrupleSet:
    """The rule-defined index set of contraction pairs to control."""

    i: int
    k: int
    r: int
    l: int
    members: tuple

    def __contains__(self, quad):
        return tuple(quad) in self.members


def q_set(i: int, k: int, r: int, l: int, p: int) -> QuadrupleSet:
    """Enumerate the quadruples (j, m, a, b) passing the seven membership rules."""
    if not (1 <= r <= p and 1 <= i <= p and 1 <= k <= p):
        raise ValueError(f"need 1 <= r,i,k <= p; got i={i}, k={k}, r={r}, p={p}")
    if not (0 <= l <= r <= min(i, k)):
        raise ValueError(f"need 0 <= l <= r <= min(i,k); got r={r}, l={l}")
    members = []
    for j in range(i + 1):
        for m in range(k + 1):
            for a in range(r + 1):
                for b in range(a + 1):
                    if b > l:
                        continue
                    if a - b > r - l:
                        continue
                    if j + m - a - b > i + k - r - l:
                        continue
                    if a > min(j, m):
                        continue
                    if j == m == p and not (b == l and a == r and r >= 1):
                        continue
                    members.append((j, m, a, b))
    return QuadrupleSet(i, k, r, l, tuple(members))


@dataclass
class RateFit:
    """OLS fit of log(value) against log(n)."""

    slope: float
    intercept: float
    ci: tuple
    zero_floored: bool = False
    degenerate: bool = False  # fewer than 3 points or zero variance in x

    def to_dict(self):
        return {"slope": self.slope, "intercept": self.intercept,
                "ci_lo": self.ci[0], "ci_hi": self.ci[1],
                "zero_floored": self.zero_floored, "degenerate": self.degenerate}


def fit_rate(n_grid: Sequence[int], values: Sequence[float],
             level: float = 0.95) -> RateFit:
    """Least-squares decay rate on the log-log scale with a slope CI."""
    n = np.asarray(n_grid, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(n) != len(v) or len(n) < 2:
        raise ValueError("need at least two (n, value) pairs")
    floored = bool(np.any(v <= 0))
    v = np.maximum(v, ZERO_FLOOR)
    x, y = np.log(n), np.log(v)
    xbar = x.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    if sxx == 0:
        return RateFit(0.0, float(y.mean()), (-np.inf, np.inf),
                       floored, degenerate=True)
    slope = float(np.sum((x - xbar) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * xbar)
    resid = y - (intercept + slope * x)
    df = len(n) - 2
    if df <= 0:
        return RateFit(slope, intercept, (-np.inf, np.inf), floored, degenerate=True)
    s2 = float(resid @ resid) / df
    se = math.sqrt(s2 / sxx)
    tq = float(sstats.t.ppf(0.5 + level / 2, df))
    return RateFit(slope, intercept, (slope - tq * se, slope + tq * se), floored)


def is_bounded_sequence(n_grid, values, level: float = 0.95) -> bool:
    """Desk-scale boundedness: max <= 2 * median and no certified growth.

    The slope requirement accepts any CI whose lower bound is nonpositive;
    demanding a nonpositive upper bound would reject constant sequences as
    soon as they carry Monte Carlo noise.
    """
    v = np.asarray(values, dtype=float)
    if np.all(v <= ZERO_TOL):
        return True
    med = float(np.median(v))
    if med <= 0 or float(v.max()) > 2 * med:
        return False
    fit = fit_rate(n_grid, values, level)
    return fit.ci[0] <= 1e-9 or fit.degenerate


def is_vanishing_sequence(n_grid, values, level: float = 0.95) -> bool:
    """Pass iff the fitted slope is negative with a CI excluding 0."""
    v = np.asarray(values, dtype=float)
    if np.all(v <= ZERO_TOL):
        return True
    fit = fit_rate(n_grid, values, level)
    return (not fit.degenerate) and fit.ci[1] < 0


@dataclass
class CheckSeries:
    label: str
    kind: str  # "a" | "b" | "c"
    values: list
    fit: Optional[RateFit] = None
    verdict: str = ""
    epsilon: Optional[float] = None
    detail: dict = field(default_factory=dict)


@dataclass
class BEstimate:
    """Limit estimate for one normalised variance coefficient."""

    value: float
    max_rel_change: float
    converged: bool


@dataclass
class ConditionReport:
    checker: str
    p: int
    n_grid: list
    checks: list
    b_sq: dict
    alpha_sq: dict
    verdicts: dict
    predicted_limit: str = ""
    notes: list = field(default_factory=list)

    def to_json(self) -> str:
        def ser(c: CheckSeries):
            return {"label": c.label, "kind": c.kind, "values": list(c.values),
                    "fit": c.fit.to_dict() if c.fit else None,
                    "verdict": c.verdict, "epsilon": c.epsilon,
                    "detail": {k: list(v) if isinstance(v, (list, tuple)) else v
                               for k, v in c.detail.items()}}

        return json.dumps({
            "checker": self.checker, "p": self.p, "n_grid": list(self.n_grid),
            "checks": [ser(c) for c in self.checks],
            "b_sq": {str(k): vars(v) for k, v in self.b_sq.items()},
            "alpha_sq": {str(k): v for k, v in self.alpha_sq.items()},
            "verdicts": self.verdicts, "predicted_limit": self.predicted_limit,
            "notes": self.notes}, indent=2, sort_keys=True)

    def csv_rows(self):
        """Flat rows (check id, n, value)."""
        for c in self.checks:
            for n, v in zip(self.n_grid, c.values):
                yield (c.label, int(n), float(v))


# -- shared machinery --------------------------------------------------------


class _ExactNorms:
    """Per-n cache of g/psi tables and the contraction norms built from them."""

    def __init__(self, kernel: Kernel, space: Space, n: int):
        if space.kind != FINITE:
            raise ValueError("exact condition checks need a finite space")
        self.space = space
        self.w = space.weights
        self.g = hoeffding_g_tables(kernel, space, n=n)
        self.p = kernel.order
        self.psi = [psi_table_from_g(self.g, k) for k in range(self.p + 1)]
        self._cache = {}

    def g0(self) -> float:
        return float(self.g[0])

    def g_norm(self, j: int) -> float:
        return table_norm(self.g[j], self.w) if j else abs(self.g0())

    def g_var(self, k: int) -> float:
        if k == 0:
            return 0.0
        return max(table_expect(self.g[k] ** 2, self.w) - self.g0() ** 2, 0.0)

    def psi_norm2(self, k: int) -> float:
        if k == 0:
            return self.g0() ** 2
        return max(table_expect(self.psi[k] ** 2, self.w), 0.0)

    def contraction(self, fam: str, j: int, m: int, a: int, b: int) -> float:
        key = (fam, j, m, a, b)
        if key not in self._cache:
            from .contractions import contract_tables
            tabs = self.g if fam == "g" else self.psi
            t = contract_tables(tabs[j], tabs[m], a, b, self.w)
            self._cache[key] = table_norm(t, self.w)
        return self._cache[key]


class _McNorms:
    """Monte Carlo counterpart of _ExactNorms."""

    def __init__(self, kernel: Kernel, space: Space, n: int, mode: MonteCarlo):
        from .ustat import hoeffding_g, hoeffding_psi
        self.space = space
        self.n = n
        self.mode = mode
        self.p = kernel.order
        self.gk = [hoeffding_g(kernel, space, l, MonteCarlo(mode.rng, mode.m), n=n)
                   for l in range(self.p + 1)]
        self.psik = [hoeffding_psi(kernel, space, k, MonteCarlo(mode.rng, mode.m), n=n)
                     for k in range(self.p + 1)]
        self.kernel = kernel
        self._cache = {}

    def g0(self) -> float:
        return float(self.gk[0](n=self.n))

    def _norm(self, fam, j, m, a, b):
        kj = (self.gk if fam == "g" else self.psik)[j]
        km = (self.gk if fam == "g" else self.psik)[m]
        idx = ContractionIndex(a, b, j, m)
        val, _ = contraction_norm(kj, km, idx, self.space, self.mode, n=self.n,
                                  m_out=self.mode.m, m_in=self.mode.m)
        return val

    def g_norm(self, j):
        return self.contraction("g", j, j, j, j) ** 0.5 if j else abs(self.g0())

    def g_var(self, k):
        if k == 0:
            return 0.0
        return max(self.g_norm(k) ** 2 - self.g0() ** 2, 0.0)

    def psi_norm2(self, k):
        if k == 0:
            return self.g0() ** 2
        return self.contraction("psi", k, k, k, k)

    def contraction(self, fam, j, m, a, b):
        key = (fam, j, m, a, b)
        if key not in self._cache:
            self._cache[key] = self._norm(fam, j, m, a, b)
        return self._cache[key]


def _norm_engine(kernel, space, n, mode):
    if mode == EXACT:
        return _ExactNorms(kernel, space, n)
    if isinstance(mode, MonteCarlo):
        return _McNorms(kernel, space, n, mode)
    raise ValueError(f"unknown mode {mode!r}")


def _admissible_vanishing(p: int):
    """(v, u, r, l) ranges of the vanishing-norm condition."""
    for u in range(1, p + 1):
        for v in range(1, u + 1):
            for r in range(1, v + 1):
                for l in range(0, min(r, u + v - r - 1) + 1):
                    yield v, u, r, l


def _b_estimates(series: dict, n_grid, trend_tol: float) -> dict:
    out = {}
    for k, vals in series.items():
        vals = np.asarray(vals, dtype=float)
        last = float(vals[-1])
        denom = np.maximum(np.abs(vals[1:]), 1e-300)
        changes = np.abs(np.diff(vals)) / denom
        mx = float(changes.max()) if len(changes) else 0.0
        if np.all(np.abs(vals) <= ZERO_TOL):
            out[k] = BEstimate(0.0, 0.0, True)
        else:
            out[k] = BEstimate(last, mx, mx <= trend_tol)
    return out


def _alpha_sq(b_sq: dict, p: int) -> dict:
    return {k: b.value / (math.factorial(k) * math.factorial(p - k) ** 2)
            for k, b in b_sq.items()}


def _run_family_checks(family: Callable[[int], Kernel], space: Space, p: int,
                       n_grid: Sequence[int], mode, fam: str,
                       eps_grid: Sequence[float],
                       trend_tol: float) -> ConditionReport:
    """Shared driver for the g-based and psi-based checkers."""
    n_grid = [int(n) for n in n_grid]
    a_series = {k: [] for k in range(1, p + 1)}
    b_checks: dict = {}
    c_checks: dict = {}
    for n in n_grid:
        kernel = family(n)
        if kernel.order != p:
            raise ValueError(f"family order {kernel.order} != p = {p}")
        eng = _norm_engine(kernel, space, n, mode)
        sigma2 = variance_sigma2(kernel, space, n, mode)[0]
        if sigma2 <= 0:
            raise ValueError(f"sigma_n^2 vanishes at n = {n}")
        for k in range(1, p + 1):
            if fam == "g":
                a_series[k].append(n ** (2 * p - k) / sigma2 * eng.g_var(k))
            else:
                a_series[k].append(n ** (2 * p - k) / sigma2 * eng.psi_norm2(k))
        # vanishing-norm family
        seen = {}
        for v, u, r, l in _admissible_vanishing(p):
            expo = 2 * p - (u + v + r - l) / 2
            if fam == "g":
                for quad in q_set(v, u, r, l, p).members:
                    key = (expo, quad)
                    seen.setdefault(key, []).append((v, u, r, l))
            else:
                key = (expo, (v, u, r, l))
                seen.setdefault(key, []).append((v, u, r, l))
        for (expo, ident), sources in seen.items():
            if fam == "g":
                j, m, a, b = ident
                label = f"b[g{j}*({a},{b})g{m}|n^{expo:g}]"
                norm = eng.contraction("g", j, m, a, b)
            else:
                v, u, r, l = ident
                label = f"b[psi{v}*({r},{l})psi{u}|n^{expo:g}]"
                norm = eng.contraction("psi", v, u, r, l)
            val = n ** expo / sigma2 * norm
            entry = b_checks.setdefault(label, {"values": [], "norms": [],
                                                "detail": {"exponent": expo,
                                                           "ident": ident,
                                                           "sources": sources}})
            entry["values"].append(val)
            entry["norms"].append(norm)
        # epsilon-bounded family
        seen_c = {}
        for r in range(1, p + 1):
            for l in range(0, r):
                expo = 2 * p - r - (r - l) / 2
                if fam == "g":
                    for quad in q_set(r, r, r, l, p).members:
                        seen_c.setdefault((expo, quad), []).append((r, l))
                else:
                    seen_c.setdefault((expo, (r, r, r, l)), []).append((r, l))
        for (expo, ident), sources in seen_c.items():
            j, m, a, b = ident
            famlbl = "g" if fam == "g" else "psi"
            label = f"c[{famlbl}{j}*({a},{b}){famlbl}{m}|n^{expo:g}]"
            norm = eng.contraction(fam, j, m, a, b)
            val = n ** expo / sigma2 * norm
            entry = c_checks.setdefault(label, {"values": [], "norms": [],
                                                "detail": {"exponent": expo,
                                                           "ident": ident,
                                                           "sources": sources}})
            entry["values"].append(val)
            entry["norms"].append(norm)

    checks = []
    for k in range(1, p + 1):
        vals = a_series[k]
        checks.append(CheckSeries(label=f"a[b{k}^2]", kind="a", values=vals,
                                  fit=fit_rate(n_grid, vals),
                                  detail={"k": k}))
    b_ok = True
    for label, entry in sorted(b_checks.items()):
        vals = entry["values"]
        ok = is_vanishing_sequence(n_grid, vals)
        b_ok &= ok
        checks.append(CheckSeries(label=label, kind="b", values=vals,
                                  fit=fit_rate(n_grid, vals),
                                  verdict="pass" if ok else "fail",
                                  detail={**entry["detail"],
                                          "norms": entry["norms"]}))
    c_ok = True
    for label, entry in sorted(c_checks.items()):
        vals = entry["values"]
        # keep the largest passing epsilon: the strongest certified decay
        eps_best = None
        for eps in sorted(eps_grid):
            weighted = [v * n ** eps for v, n in zip(vals, n_grid)]
            if is_bounded_sequence(n_grid, weighted):
                eps_best = eps
        ok = eps_best is not None
        c_ok &= ok
        checks.append(CheckSeries(label=label, kind="c", values=vals,
                                  fit=fit_rate(n_grid, vals),
                                  verdict="pass" if ok else "fail",
                                  epsilon=eps_best,
                                  detail={**entry["detail"],
                                          "norms": entry["norms"]}))
    b_sq = _b_estimates(a_series, n_grid, trend_tol)
    a_ok = all(b.converged for b in b_sq.values())
    verdicts = {
        "a": "pass" if a_ok else "inconclusive",
        "b": "pass" if b_ok else "fail",
        "c": "pass" if c_ok else "fail",
    }
    if verdicts["a"] == "pass" and b_ok and c_ok:
        verdicts["overall"] = "consistent with Gaussian functional limit"
    elif not b_ok or not c_ok:
        verdicts["overall"] = "fail"
    else:
        verdicts["overall"] = "inconclusive"
    report = ConditionReport(checker=fam, p=p, n_grid=n_grid, checks=checks,
                             b_sq=b_sq, alpha_sq=_alpha_sq(b_sq, p),
                             verdicts=verdicts)
    eps_seen = [c.epsilon for c in checks if c.kind == "c" and c.epsilon is not None]
    if eps_seen:
        # a single epsilon need not serve every pair; report the per-pair
        # values (on each check) plus their minimum
        report.notes.append(f"epsilon_min_across_checks={min(eps_seen):g}")
    if verdicts["overall"].startswith("consistent"):
        terms = ", ".join(f"alpha^2[{k}]={v:.6g}"
                          for k, v in report.alpha_sq.items())
        report.predicted_limit = f"sum of time-changed Brownian motions ({terms})"
    return report


def check_conditions_g(family, space, p, n_grid, mode=EXACT,
                       eps_grid=EPS_GRID_DEFAULT, trend_tol=0.2) -> ConditionReport:
    """Checker on the conditional-expectation kernels g_l.

    Evaluates the normalised variance limits, the weighted contraction-norm
    family over the rule-defined quadruple sets, and the epsilon-weighted
    boundedness family, all over the n-grid.
    """
    return _run_family_checks(family, space, p, n_grid, mode, "g",
                              eps_grid, trend_tol)


def check_conditions_psi(family, space, p, n_grid, mode=EXACT,
                         eps_grid=EPS_GRID_DEFAULT, trend_tol=0.2) -> ConditionReport:
    """Checker on the canonical components psi_k (same shape as the g checker)."""
    return _run_family_checks(family, space, p, n_grid, mode, "psi",
                              eps_grid, trend_tol)


def check_degenerate_kernel(family, space, p, n_grid, mode=EXACT,
                            eps_grid=EPS_GRID_DEFAULT,
                            degeneracy_tol=1e-8) -> ConditionReport:
    """Checker for degenerate kernels via normalised self-contraction ratios.

    A passing verdict is consistent with convergence to Brownian motion under
    the time change t^p, i.e. limit covariance (s ^ t)^p.
    """
    n_grid = [int(n) for n in n_grid]
    ratio_checks: dict = {}
    eps_checks: dict = {}
    for n in n_grid:
        kernel = family(n)
        resid = check_degeneracy(kernel, space, mode, n=n)
        if resid > degeneracy_tol:
            raise ValueError(
                f"kernel is not degenerate at n = {n}: residual {resid:.3g} "
                f"> {degeneracy_tol:g}")
        eng = _norm_engine(kernel, space, n, mode)
        norm2 = eng.contraction("g", p, p, p, p)  # ||psi||^2
        if norm2 <= 0:
            raise ValueError(f"||psi||^2 vanishes at n = {n}")
        for r in range(1, p + 1):
            for l in range(0, min(r, 2 * p - r - 1) + 1):
                val = n ** ((l - r) / 2) * eng.contraction("g", p, p, r, l) / norm2
                lbl = f"ratio[r={r},l={l}]"
                ratio_checks.setdefault(lbl, []).append(val)
        for l in range(0, p):
            val = n ** ((l - p) / 2) * eng.contraction("g", p, p, p, l) / norm2
            eps_checks.setdefault(f"eps[l={l}]", []).append(val)

    checks = []
    all_ok = True
    for label, vals in sorted(ratio_checks.items()):
        ok = is_vanishing_sequence(n_grid, vals)
        all_ok &= ok
        checks.append(CheckSeries(label=label, kind="b", values=vals,
                                  fit=fit_rate(n_grid, vals),
                                  verdict="pass" if ok else "fail"))
    eps_ok = True
    for label, vals in sorted(eps_checks.items()):
        eps_best = None
        for eps in sorted(eps_grid):
            weighted = [v * n ** eps for v, n in zip(vals, n_grid)]
            if is_bounded_sequence(n_grid, weighted):
                eps_best = eps
        ok = eps_best is not None
        eps_ok &= ok
        checks.append(CheckSeries(label=label, kind="c", values=vals,
                                  fit=fit_rate(n_grid, vals),
                                  verdict="pass" if ok else "fail",
                                  epsilon=eps_best))
    b_sq = {p: BEstimate(float(math.factorial(p)), 0.0, True)}
    verdicts = {"b": "pass" if all_ok else "fail",
                "c": "pass" if eps_ok else "fail"}
    verdicts["overall"] = ("consistent with Gaussian functional limit"
                           if all_ok and eps_ok else "fail")
    report = ConditionReport(checker="degenerate", p=p, n_grid=n_grid,
                             checks=checks, b_sq=b_sq,
                             alpha_sq=_alpha_sq(b_sq, p), verdicts=verdicts)
    if all_ok and eps_ok:
        report.predicted_limit = f"Brownian motion under time change t^{p}"
    return report


# -- named order-2 checklists -------------------------------------------------


def p2_g_checklist(kernel: Kernel, space: Space, n: int, mode=EXACT) -> dict:
    """The deduplicated order-2 list for the g-based checker.

    Six quantities that must vanish and four whose epsilon-weighted versions
    must stay bounded; values are returned without the epsilon weight.
    """
    if kernel.order != 2:
        raise ValueError("the named checklist is for order-2 kernels")
    eng = _norm_engine(kernel, space, n, mode)
    sigma2 = variance_sigma2(kernel, space, n, mode)[0]
    g0 = abs(eng.g0())
    n2, n52, n32 = n ** 2, n ** 2.5, n ** 1.5
    g1n = eng.g_norm(1)
    g2n = eng.g_norm(2)
    if mode == EXACT:
        g1_l4_sq = table_expect(eng.g[1] ** 4, eng.w) ** 0.5
        g2_l4_sq = table_expect(eng.g[2] ** 4, eng.w) ** 0.5
    else:
        g1_l4_sq = eng.contraction("g", 1, 1, 1, 0)
        g2_l4_sq = eng.contraction("g", 2, 2, 2, 0)
    return {
        "1": n2 / sigma2 * g2n * g0,
        "2": n2 / sigma2 * eng.contraction("g", 1, 2, 1, 0),
        "3": n52 / sigma2 * eng.contraction("g", 1, 2, 1, 1),
        "4": n32 / sigma2 * eng.contraction("g", 2, 2, 1, 0),
        "5": n2 / sigma2 * eng.contraction("g", 2, 2, 1, 1),
        "6": n32 / sigma2 * g1n * g2n,
        "i": n52 / sigma2 * g0 ** 2,
        "ii": n52 / sigma2 * g1n * g0,
        "iii": n52 / sigma2 * g1_l4_sq,
        "iv": n / sigma2 * g2_l4_sq,
    }


def p2_psi_checklist(kernel: Kernel, space: Space, n: int, mode=EXACT) -> dict:
    """The deduplicated order-2 list for the psi-based checker."""
    if kernel.order != 2:
        raise ValueError("the named checklist is for order-2 kernels")
    eng = _norm_engine(kernel, space, n, mode)
    sigma2 = variance_sigma2(kernel, space, n, mode)[0]
    n2, n52, n32, n1 = n ** 2, n ** 2.5, n ** 1.5, float(n)
    return {
        "1": n2 / sigma2 * eng.contraction("psi", 1, 2, 1, 0),
        "2": n52 / sigma2 * eng.contraction("psi", 1, 2, 1, 1),
        "3": n32 / sigma2 * eng.contraction("psi", 2, 2, 1, 0),
        "4": n2 / sigma2 * eng.contraction("psi", 2, 2, 1, 1),
        "i": n52 / sigma2 * eng.contraction("psi", 1, 1, 1, 0),
        "ii": n1 / sigma2 * eng.contraction("psi", 2, 2, 2, 0),
        "iii": n32 / sigma2 * eng.contraction("psi", 2, 2, 2, 1),
    }
