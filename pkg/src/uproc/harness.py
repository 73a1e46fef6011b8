"""Config-driven experiment orchestration.

A scenario is described by a single TOML file (key/value with nested tables)
and produces a report plus flat CSV artifacts.  All randomness flows from the
explicit seed in the config through counter-based streams keyed by replicate
index, so reruns are byte-identical regardless of the worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .kernels import Kernel, load_table_kernel_csv, product_kernel, \
    indicator_match_kernel, distance_threshold_kernel
from .rng import RngStream
from .spaces import FINITE, Space, circle_uniform, cube_uniform, finite, sample
from .ustat import (EXACT, MonteCarlo, check_degeneracy, prefix_ustat_values,
                    variance_sigma2)

SCENARIOS = ("condition_check", "fclt_verify", "rgg", "changepoint",
             "diag_dominant", "product_verify")

#: sub-stream ids per purpose, so stages never share draws
STREAM_SIM = 1
STREAM_CHECK = 2
STREAM_AUX = 3


def load_config(path) -> dict:
    import tomli
    with open(path, "rb") as fh:
        return tomli.load(fh)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def validate_config(cfg: dict) -> list:
    """Collect every violated field rather than stopping at the first."""
    errors = []
    kind = cfg.get("scenario", {}).get("kind")
    if kind not in SCENARIOS:
        errors.append(f"scenario.kind must be one of {SCENARIOS}, got {kind!r}")
    run = cfg.get("run", {})
    if "seed" not in run:
        errors.append("run.seed is required (wall-clock seeding is not supported)")
    if kind in ("fclt_verify", "rgg", "changepoint", "diag_dominant"):
        if int(run.get("replicates", 0)) < 1:
            errors.append("run.replicates must be a positive integer")
    needs_dist = kind in ("condition_check", "fclt_verify") or (
        kind == "changepoint"
        and cfg.get("changepoint", {}).get("mode", "kernel") == "kernel")
    if needs_dist:
        if "distribution" not in cfg:
            errors.append("a [distribution] table is required")
        else:
            dk = cfg["distribution"].get("kind")
            if dk not in ("finite", "cube_uniform", "circle_uniform"):
                errors.append(f"distribution.kind {dk!r} not expressible in config")
            if dk == "finite":
                atoms = cfg["distribution"].get("atoms")
                weights = cfg["distribution"].get("weights")
                if not atoms or not weights or len(atoms) != len(weights):
                    errors.append("finite distribution needs matching atoms/weights")
    if needs_dist and "kernel" not in cfg:
        errors.append("a [kernel] table is required")
    if kind == "rgg" and "rgg" not in cfg:
        errors.append("an [rgg] table is required")
    if kind == "diag_dominant" and "diag" not in cfg:
        errors.append("a [diag] table is required")
    if kind == "product_verify" and "product" not in cfg:
        errors.append("a [product] table is required")
    return errors


# -- builders -------------------------------------------------------------------


def build_space(cfg: dict) -> Space:
    d = cfg["distribution"]
    kind = d["kind"]
    if kind == "finite":
        return finite(np.asarray(d["atoms"], dtype=float),
                      np.asarray(d["weights"], dtype=float))
    if kind == "cube_uniform":
        dim = int(d.get("dimension", 1))
        box = d.get("box")
        return cube_uniform(dim, box=np.asarray(box, dtype=float) if box else None)
    if kind == "circle_uniform":
        return circle_uniform()
    raise ValueError(f"unsupported distribution kind {kind!r}")


def space_moments(space: Space, cfg: dict):
    """(mean, variance) of the scalar coordinate law, for analytic norms."""
    if space.kind == FINITE:
        m = float(space.atoms @ space.weights)
        v = float((space.atoms - m) ** 2 @ space.weights)
        return m, v
    if space.kind == "cube_uniform" and space.dimension == 1:
        a, b = space.support_box[0]
        return (a + b) / 2, (b - a) ** 2 / 12
    if space.kind == "circle_uniform":
        return 0.5, 1.0 / 12.0
    raise ValueError("no analytic moments for this space")


def build_kernel_family(cfg: dict, space: Space) -> Callable[[int], Kernel]:
    k = cfg["kernel"]
    name = k["name"]
    if name == "product":
        kern = product_kernel(int(k.get("order", 2)),
                              center=float(k.get("center", 0.0)))
        return lambda n: kern
    if name == "indicator_match":
        kern = indicator_match_kernel()
        return lambda n: kern
    if name == "distance_threshold":
        centered = bool(k.get("centered", False))
        if "theta_const" in k:
            theta = float(k["theta_const"])
        else:
            coeff = float(k.get("theta_coeff", 1.0))
            expo = float(k.get("theta_exponent", 0.0))
            theta = lambda n: coeff * n ** expo
        kern = distance_threshold_kernel(space, theta, centered=centered,
                                         center_value=k.get("center_value"))
        return lambda n: kern
    if name == "table":
        kern = load_table_kernel_csv(k["csv"], space)
        return lambda n: kern
    raise ValueError(f"unknown kernel name {name!r}")


def _threshold_radius(cfg: dict, n: int) -> float:
    k = cfg["kernel"]
    if "theta_const" in k:
        return float(k["theta_const"])
    return float(k.get("theta_coeff", 1.0)) * n ** float(k.get("theta_exponent", 0.0))


def analytic_normalization(cfg: dict, space: Space, n: int):
    """(g0, sigma_sq, psi_norms_sq) for the kernels with closed-form moments."""
    k = cfg["kernel"]
    name = k["name"]
    if name == "product":
        p = int(k.get("order", 2))
        m, v = space_moments(space, cfg)
        if p == 1:
            g0, psi1, psi2 = m, v, 0.0
        elif p == 2:
            g0, psi1, psi2 = m * m, m * m * v, v * v
        else:
            raise ValueError("analytic normalisation for product kernels "
                             "covers orders 1 and 2")
        g0 -= float(k.get("center", 0.0))
        sig = (n - 1) ** 2 * n * psi1 + math.comb(n, 2) * psi2 if p == 2 \
            else n * psi1
        return g0, sig, (psi1, psi2)
    if name == "distance_threshold" and space.kind == "circle_uniform" \
            and bool(k.get("centered", False)):
        eps = _threshold_radius(cfg, n)
        if eps > 0.5:
            raise ValueError("circle threshold beyond 1/2 is not centred exactly")
        psi2 = 2 * eps * (1 - 2 * eps)
        return 0.0, math.comb(n, 2) * psi2, (0.0, psi2)
    raise ValueError(f"no analytic normalisation for kernel {name!r}")


def normalization(cfg: dict, space: Space, family, n: int, rng: RngStream):
    src = cfg.get("normalization", {}).get("source", "auto")
    if src == "given":
        nz = cfg["normalization"]
        return float(nz["g0"]), float(nz["sigma_sq"])
    if src in ("auto", "exact") and space.kind == FINITE:
        from .ustat import hoeffding_g_tables
        kern = family(n)
        g0 = float(hoeffding_g_tables(kern, space, n=n)[0])
        return g0, variance_sigma2(kern, space, n, EXACT)[0]
    if src in ("auto", "analytic"):
        g0, sig, _ = analytic_normalization(cfg, space, n)
        return g0, sig
    if src == "mc":
        m = int(cfg["normalization"].get("m", 2000))
        mode = MonteCarlo(rng.child(77).generator(), m)
        kern = family(n)
        from .ustat import hoeffding_g
        g0 = float(hoeffding_g(kern, space, 0, mode, n=n)())
        return g0, variance_sigma2(kern, space, n, mode)[0]
    raise ValueError(f"unknown normalization source {src!r}")


def eval_grid(cfg: dict) -> np.ndarray:
    g = int(cfg.get("run", {}).get("grid_points", 5))
    return np.arange(1, g + 1) / g


# -- replicate parallelism ----------------------------------------------------------


def _chunks(total: int, workers: int):
    size = math.ceil(total / max(workers, 1))
    return [(lo, min(lo + size, total)) for lo in range(0, total, size)]


def map_replicates(fn, cfg: dict, total: int, workers: int):
    """Run fn(cfg, lo, hi) over replicate ranges, concatenating in order."""
    if workers <= 1 or total < 2 * workers:
        parts = [fn(cfg, lo, hi) for lo, hi in _chunks(total, 1)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(fn, cfg, lo, hi)
                       for lo, hi in _chunks(total, workers)]
            parts = [f.result() for f in futures]
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate([p[i] for p in parts])
                     for i in range(len(parts[0])))
    return np.concatenate(parts)


# -- scenario: condition_check -------------------------------------------------------


def _make_checker_report(cfg: dict):
    from .conditions import (check_conditions_g, check_conditions_psi,
                             check_degenerate_kernel)
    chk = cfg["check"]
    space = build_space(cfg)
    family = build_kernel_family(cfg, space)
    seed = int(cfg["run"]["seed"])
    p = int(chk["p"])
    n_grid = [int(x) for x in chk["n_grid"]]
    mode_name = chk.get("mode", "exact")
    if mode_name == "exact":
        mode = EXACT
    else:
        mode = MonteCarlo(RngStream(seed, STREAM_CHECK).generator(),
                          int(chk.get("mc_m", 2000)))
    eps_grid = tuple(chk.get("eps_grid", (0.1, 0.25, 0.5)))
    checker = chk.get("checker", "psi")
    if checker == "g":
        return check_conditions_g(family, space, p, n_grid, mode, eps_grid)
    if checker == "psi":
        return check_conditions_psi(family, space, p, n_grid, mode, eps_grid)
    if checker == "degenerate":
        tol = float(chk.get("degeneracy_tol", 1e-8))
        return check_degenerate_kernel(family, space, p, n_grid, mode, eps_grid,
                                       degeneracy_tol=tol)
    raise ValueError(f"unknown checker {checker!r}")


def _run_condition_check(cfg: dict) -> dict:
    rep = _make_checker_report(cfg)
    expected = cfg.get("check", {}).get("expect_overall", "consistent")
    ok = rep.verdicts["overall"].startswith(expected)
    norms_rows = []
    for c in rep.checks:
        for n, norm in zip(rep.n_grid, c.detail.get("norms", [])):
            norms_rows.append((c.label, int(n), float(norm)))
    return {
        "verdicts": dict(rep.verdicts),
        "b_sq": {str(k): vars(v) for k, v in rep.b_sq.items()},
        "alpha_sq": {str(k): v for k, v in rep.alpha_sq.items()},
        "predicted_limit": rep.predicted_limit,
        "pass": ok,
        "checks_csv": list(rep.csv_rows()),
        "norms_csv": norms_rows,
        "check_details": json.loads(rep.to_json()),
    }


# -- scenario: fclt_verify -------------------------------------------------------------


def _fclt_batch(cfg: dict, lo: int, hi: int) -> np.ndarray:
    space = build_space(cfg)
    family = build_kernel_family(cfg, space)
    run = cfg["run"]
    n = int(run["n"])
    seed = int(run["seed"])
    grid = eval_grid(cfg)
    kern = family(n)
    g0, sigma_sq = normalization(cfg, space, family, n, RngStream(seed))
    sigma = math.sqrt(sigma_sq)
    sizes = np.floor(n * grid + 1e-12).astype(int)
    means = np.array([math.comb(int(m), kern.order) * g0 for m in sizes])
    out = np.empty((hi - lo, len(grid)))
    for r in range(lo, hi):
        pts = sample(space, n, RngStream(seed, STREAM_SIM).child(r))
        pref = prefix_ustat_values(kern, pts, n_param=n)
        out[r - lo] = (pref[sizes] - means) / sigma
    return out


def build_limit_spec(cfg: dict):
    from .limits import LimitSpec
    lim = cfg.get("limit", {"variant": "time_changed_bm", "p": 2})
    params = {k: v for k, v in lim.items() if k not in
              ("variant", "p", "alpha_sq", "c1", "c2", "case")}
    return LimitSpec(variant=lim.get("variant", "time_changed_bm"),
                     p=int(lim.get("p", 2)),
                     alpha_sq=tuple(lim.get("alpha_sq", ())),
                     c1=float(lim.get("c1", 0.0)), c2=float(lim.get("c2", 0.0)),
                     case=lim.get("case", ""), params=params)


def _ensemble_comparison(cfg: dict, w: np.ndarray, grid, target_cov, n: int) -> dict:
    from scipy.stats import norm
    from .limits import increment_moment_diag, ks_test, max_cov_deviation
    tol = cfg.get("tolerances", {})
    dev = max_cov_deviation(w, grid, target_cov)
    ks_d, ks_p = ks_test(w[:, -1], norm.cdf)
    inc = increment_moment_diag(w, grid, beta=4.0, n=n)
    out = {
        "cov_max_abs_dev": dev["max_abs_dev"],
        "cov_dev_at": dev["at"],
        "ks_statistic": ks_d,
        "ks_p": ks_p,
        "increment_exponent": inc.exponent,
        "increment_ci": list(inc.ci),
        "cov_csv": _cov_rows(grid, dev),
        "verdicts": {},
    }
    if "cov_max_abs" in tol:
        out["verdicts"]["cov_within_tol"] = bool(
            dev["max_abs_dev"] <= float(tol["cov_max_abs"]))
    if "ks_p_min" in tol:
        if cfg.get("negative_control", {}).get("enabled", False):
            out["verdicts"]["ks_rejects_gaussian"] = bool(
                ks_p < float(tol["ks_p_min"]))
        else:
            out["verdicts"]["ks_marginal_gaussian"] = bool(
                ks_p > float(tol["ks_p_min"]))
    if "increment_min_exponent" in tol:
        out["verdicts"]["increment_exponent_ok"] = bool(
            inc.exponent >= float(tol["increment_min_exponent"]))
    return out


def _cov_rows(grid, dev) -> list:
    rows = []
    emp, tgt, se = dev["empirical"], dev["target"], dev["se"]
    for i in range(len(grid)):
        for j in range(i, len(grid)):
            rows.append((float(grid[i]), float(grid[j]), float(emp[i, j]),
                         float(tgt[i, j]), float(se[i, j])))
    return rows


def _run_fclt_verify(cfg: dict, workers: int) -> dict:
    run = cfg["run"]
    grid = eval_grid(cfg)
    reps = int(run["replicates"])
    w = map_replicates(_fclt_batch, cfg, reps, workers)
    spec = build_limit_spec(cfg)
    report = _ensemble_comparison(cfg, w, grid, spec.cov, int(run["n"]))
    report["paths_csv"] = _paths_rows(w, grid)
    if "check" in cfg:
        chk = _run_condition_check(cfg)
        report["check"] = {k: chk[k] for k in
                           ("verdicts", "b_sq", "alpha_sq", "predicted_limit")}
        report["checks_csv"] = chk["checks_csv"]
        nc = cfg.get("negative_control", {})
        if nc.get("enabled", False):
            flat = nc.get("flat_ratio")
            details = chk["check_details"]["checks"]
            flat_ok = False
            for c in details:
                if c["label"] == flat:
                    lo_ci, hi_ci = c["fit"]["ci_lo"], c["fit"]["ci_hi"]
                    flat_ok = lo_ci <= 0.0 <= hi_ci and c["verdict"] == "fail"
            report["verdicts"]["check_flat_ratio_detected"] = bool(flat_ok)
            report["verdicts"]["check_overall_fails"] = bool(
                chk["verdicts"]["overall"] == "fail")
        else:
            report["verdicts"]["check_consistent"] = bool(
                chk["verdicts"]["overall"].startswith("consistent"))
    report["pass"] = all(report["verdicts"].values())
    return report


def _paths_rows(w: np.ndarray, grid) -> list:
    rows = []
    for r in range(w.shape[0]):
        for j, t in enumerate(grid):
            rows.append((r, float(t), float(w[r, j])))
    return rows


# -- scenario: rgg ----------------------------------------------------------------------


def _rgg_radius(cfg: dict, n: int) -> float:
    r = cfg["rgg"]
    return float(r.get("t_coeff", 1.0)) * n ** float(r["t_exponent"])


def _rgg_motif(cfg: dict):
    from . import rgg as rggmod
    name = cfg["rgg"].get("motif", "edge")
    if isinstance(name, list):
        p = int(cfg["rgg"]["motif_vertices"])
        return rggmod.motif_from_edge_list(p, [tuple(e) for e in name])
    return {"edge": rggmod.edge_motif(), "triangle": rggmod.triangle_motif(),
            "path3": rggmod.path_motif(3), "star4": rggmod.star_motif(4),
            "complete4": rggmod.complete_motif(4)}[name]


def _rgg_batch(cfg: dict, lo: int, hi: int) -> np.ndarray:
    from .rgg import build_graph, count_motifs_sequential
    run = cfg["run"]
    n = int(cfg["_n_current"])
    seed = int(run["seed"])
    d = int(cfg["rgg"].get("d", 2))
    grid = eval_grid(cfg)
    radius = _rgg_radius(cfg, n)
    motif = _rgg_motif(cfg)
    space = cube_uniform(d)
    out = np.empty((hi - lo, len(grid)))
    for r in range(lo, hi):
        pts = sample(space, n, RngStream(seed, STREAM_SIM).child(r * 131071 + n))
        g = build_graph(pts, radius)
        path = count_motifs_sequential(g, motif, grid=grid)
        out[r - lo] = path.values
    return out


def _run_rgg(cfg: dict, workers: int) -> dict:
    from .rgg import classify_regime, estimate_dk_nu, limit_cov_rgg, \
        predicted_variance
    run = cfg["run"]
    r = cfg["rgg"]
    seed = int(run["seed"])
    d = int(r.get("d", 2))
    reps = int(run["replicates"])
    motif = _rgg_motif(cfg)
    p = motif.p
    if "n_grid" in r:
        n_grid = [int(x) for x in r["n_grid"]]
    else:
        n_grid = [int(run["n"])]
    n_main = int(r.get("n_main", n_grid[-1]))
    grid = eval_grid(cfg)
    t_rule = lambda n: _rgg_radius(cfg, n)
    params = classify_regime(n_grid if len(n_grid) > 1 else [n_main // 2, n_main],
                             t_rule, d, p, mu_uniform=True)
    case = r.get("case", params.case)
    dk = []
    space = cube_uniform(d)
    budget = int(r.get("dk_budget", 200000))
    for k in range(1, p + 1):
        dk.append(estimate_dk_nu(space, motif, k, budget,
                                 RngStream(seed, STREAM_AUX).child(k)))
    nu = dk[0].nu
    d_list = [e.d_k for e in dk]
    var_ratios = {}
    ensembles = {}
    for n in n_grid:
        cfg2 = dict(cfg)
        cfg2["_n_current"] = n
        w = map_replicates(_rgg_batch, cfg2, reps, workers)
        ensembles[n] = w
        counts = w[:, -1]
        pred = predicted_variance(case, n, t_rule(n), d, p, d_list, nu)
        var_ratios[n] = float(np.var(counts, ddof=1)) / pred
    # normalised paths at the main size, centred and scaled empirically
    w = ensembles[n_main]
    mean = w.mean(axis=0)
    sigma = float(np.std(w[:, -1], ddof=1))
    wn = (w - mean) / sigma
    lam = r.get("lambda")
    target = lambda s, t: limit_cov_rgg(case, p, s, t, lam=lam,
                                        rho=params.rho or n_main * t_rule(n_main) ** d,
                                        d_list=d_list, nu=nu)
    report = _ensemble_comparison(cfg, wn, grid, target, n_main)
    ratios = [var_ratios[n] for n in n_grid]
    report["case"] = case
    report["window_ok"] = params.window_ok
    report["var_ratio_by_n"] = {str(n): var_ratios[n] for n in n_grid}
    report["dk"] = {str(k + 1): {"d_k": e.d_k, "se": e.d_k_se} for k, e in
                    enumerate(dk)}
    report["nu"] = {"value": nu, "se": dk[0].nu_se, "feasible": dk[0].feasible}
    if case == "C2":
        # the dense-uniform mixture needs the limits behind lambda to exist;
        # report the empirical trend and flag drift instead of deciding
        from .rgg import lambda_dense_uniform, var_g1_mc
        lam_trend = []
        for n in n_grid:
            vg1 = var_g1_mc(space, motif, t_rule(n),
                            RngStream(seed, STREAM_AUX).child(10_000 + n))
            lam_trend.append(lambda_dense_uniform(n, t_rule(n), d, p, vg1,
                                                  d_list[1]))
        report["lambda_trend"] = lam_trend
        finite_vals = [x for x in lam_trend if math.isfinite(x)]
        drift = (max(finite_vals) - min(finite_vals)) / max(finite_vals) \
            if finite_vals else math.inf
        report["lambda_converged"] = bool(drift < 0.25)
    tol = cfg.get("tolerances", {})
    if "var_ratio_tol" in tol and len(ratios) >= 2:
        drift = abs(ratios[-1] - ratios[-2]) / max(abs(ratios[-1]), 1e-300)
        report["var_ratio_drift"] = drift
        report["verdicts"]["var_ratio_stabilises"] = bool(
            drift <= float(tol["var_ratio_tol"]))
    report["paths_csv"] = _paths_rows(w, grid)
    report["pass"] = all(report["verdicts"].values())
    return report


# -- scenario: changepoint ------------------------------------------------------------


def _cp_kernel_batch(cfg: dict, lo: int, hi: int) -> np.ndarray:
    from .changepoint import cross_block_values
    space = build_space(cfg)
    family = build_kernel_family(cfg, space)
    run = cfg["run"]
    n = int(run["n"])
    seed = int(run["seed"])
    kern = family(n)
    if space.kind == FINITE:
        from .changepoint import component_norms_sq
        _, _, g0 = component_norms_sq(kern, space, n=n)
    else:
        g0, _, _ = analytic_normalization(cfg, space, n)
    grid = eval_grid(cfg)
    ks = np.floor(n * grid + 1e-12).astype(int)
    out = np.empty((hi - lo, len(grid)))
    for r in range(lo, hi):
        pts = sample(space, n, RngStream(seed, STREAM_SIM).child(r))
        vals = cross_block_values(kern, pts, n_param=n, center=g0)
        out[r - lo] = vals[ks]
    return out


def _cp_edge_batch(cfg: dict, lo: int, hi: int):
    from .rgg import build_graph, cube_edge_probability
    run = cfg["run"]
    n = int(run["n"])
    seed = int(run["seed"])
    cp = cfg["changepoint"]
    d = int(cp.get("d", 2))
    radius = float(cp.get("t_coeff", 1.0)) * n ** float(cp["t_exponent"])
    eta = cube_edge_probability(radius, d)
    grid = eval_grid(cfg)
    ks_eval = np.floor(n * grid + 1e-12).astype(int)
    space = cube_uniform(d)
    s_eval = np.empty((hi - lo, len(grid)))
    m_raw = np.empty(hi - lo)
    a_loc = np.empty(hi - lo)
    counts = np.empty(hi - lo)
    kfull = np.arange(n + 1)
    drift = eta * kfull * (n - kfull)
    for r in range(lo, hi):
        pts = sample(space, n, RngStream(seed, STREAM_SIM).child(r))
        g = build_graph(pts, radius)
        lows, highs = [], []
        for v in range(n):
            nb = g.neighbors(v)
            highs.extend([v] * int(np.sum(nb < v)))
            lows.extend([v] * int(np.sum(nb > v)))
        enter = np.bincount(np.asarray(lows, dtype=int) + 1, minlength=n + 1)
        leave = np.bincount(np.asarray(highs, dtype=int) + 1, minlength=n + 1)
        s_full = np.cumsum(enter - leave)
        neg = drift - s_full  # -T_n * sigma
        imax = int(np.argmax(neg))
        m_raw[r - lo] = neg[imax]
        a_loc[r - lo] = imax / n
        s_eval[r - lo] = s_full[ks_eval] - drift[ks_eval]
        counts[r - lo] = g.edge_count
    return s_eval, m_raw, a_loc, counts


def _run_changepoint(cfg: dict, workers: int) -> dict:
    from .limits import bridge_cov, bridge_max_cdf, kolmogorov_cdf, ks_statistic
    from .changepoint import limit_mixture_cov, ycov_exact
    run = cfg["run"]
    cp = cfg.get("changepoint", {"mode": "kernel"})
    reps = int(run["replicates"])
    n = int(run["n"])
    grid = eval_grid(cfg)
    tol = cfg.get("tolerances", {})
    report: dict = {"verdicts": {}}
    if cp.get("mode", "kernel") == "kernel":
        y = map_replicates(_cp_kernel_batch, cfg, reps, workers)
        space = build_space(cfg)
        if space.kind == FINITE:
            from .changepoint import component_norms_sq
            family = build_kernel_family(cfg, space)
            psi1, psi2, _ = component_norms_sq(family(n), space, n=n)
        else:
            _, _, (psi1, psi2) = analytic_normalization(cfg, space, n)
        gamma = math.sqrt(ycov_exact(psi1, psi2, n, 0.5, 0.5))
        yt = y / gamma
        c1 = float(cp.get("c1", 2.0))
        c2 = float(cp.get("c2", 0.0))
        target = lambda s, t: limit_mixture_cov(c1, c2, s, t)
        comp = _ensemble_comparison(cfg, yt, grid, target, n)
        comp.pop("ks_statistic"), comp.pop("ks_p")
        comp["verdicts"].pop("ks_marginal_gaussian", None)
        report.update(comp)
        report["gamma"] = gamma
        if "c_trend_n_grid" in cp:
            from .changepoint import estimate_c
            space2 = build_space(cfg)
            family = build_kernel_family(cfg, space2)
            if space2.kind == FINITE:
                trend = estimate_c(family, space2, cp["c_trend_n_grid"])
            else:
                def norms_fn(nn):
                    _, _, ns = analytic_normalization(cfg, space2, nn)
                    return ns
                trend = estimate_c(family, space2, cp["c_trend_n_grid"],
                                   norms_fn=norms_fn)
            report["c1_sq_trend"] = trend.c1_sq
            report["c2_sq_trend"] = trend.c2_sq
            report["ch_normalisation"] = trend.ch_normalisation
            if "c2_trend_slope_max" in tol:
                report["verdicts"]["c2_sq_vanishes"] = bool(
                    trend.c2_fit.ci[1] <= float(tol["c2_trend_slope_max"]))
        report["paths_csv"] = _paths_rows(yt, grid)
    else:
        s_eval, m_raw, a_loc, counts = map_replicates(_cp_edge_batch, cfg, reps,
                                                      workers)
        sigma = float(np.std(counts, ddof=1))
        if sigma <= 0:
            raise ValueError("degenerate replicate variance for the edge count")
        t_ens = s_eval / sigma
        m_n = m_raw / sigma
        target = lambda s, t: 2.0 * bridge_cov(s, t)
        comp = _ensemble_comparison(cfg, t_ens, grid, target, n)
        comp.pop("ks_statistic"), comp.pop("ks_p")
        comp["verdicts"].pop("ks_marginal_gaussian", None)
        report.update(comp)
        scaled = m_n / math.sqrt(2.0)
        d_bridge_max = ks_statistic(scaled, bridge_max_cdf)
        d_kolmogorov = ks_statistic(scaled, kolmogorov_cdf)
        d_argmax = ks_statistic(a_loc, lambda u: min(max(u, 0.0), 1.0))
        report["max_stat"] = {
            "ks_dist_bridge_max_law": d_bridge_max,
            "ks_dist_two_sided_kolmogorov": d_kolmogorov,
        }
        report["argmax_ks_dist_uniform"] = d_argmax
        report["sigma"] = sigma
        if "max_ks_dist" in tol:
            report["verdicts"]["max_stat_matches_bridge_max_law"] = bool(
                d_bridge_max <= float(tol["max_ks_dist"]))
            report["verdicts"]["argmax_uniform"] = bool(
                d_argmax <= float(tol["max_ks_dist"]))
        report["stats_csv"] = [(r, float(m_n[r]), float(a_loc[r]))
                               for r in range(reps)]
        report["paths_csv"] = _paths_rows(t_ens, grid)
    report["pass"] = all(report["verdicts"].values())
    return report


# -- scenario: diag_dominant -----------------------------------------------------------


def _build_diag_family(cfg: dict):
    from .diagdom import DirichletFamily, HaarFamily
    dg = cfg["diag"]
    fam = dg.get("family", "dirichlet")
    if fam == "dirichlet":
        return DirichletFamily(k_exponent=float(dg.get("k_exponent", 1.5)),
                               delta_exponent=float(dg.get("delta_exponent", 0.625)))
    if fam == "haar":
        return HaarFamily(k_exponent=float(dg.get("k_exponent", 1.5)))
    raise ValueError(f"unknown diagonal family {fam!r}")


def _diag_batch(cfg: dict, lo: int, hi: int) -> np.ndarray:
    from .diagdom import simulate_diag_paths
    family = _build_diag_family(cfg)
    run = cfg["run"]
    n = int(run["n"])
    seed = int(run["seed"])
    grid = eval_grid(cfg)
    out = np.empty((hi - lo, len(grid)))
    kern = family.kernel(n)
    g0 = family.g0(n)
    sigma = math.sqrt(family.sigma_sq(n))
    sizes = np.floor(n * grid + 1e-12).astype(int)
    means = np.array([math.comb(int(m), 2) * g0 for m in sizes])
    for r in range(lo, hi):
        pts = sample(family.space, n, RngStream(seed, STREAM_SIM).child(r))
        pref = prefix_ustat_values(kern, pts)
        out[r - lo] = (pref[sizes] - means) / sigma
    return out


def _run_diag(cfg: dict, workers: int) -> dict:
    from .diagdom import check_functional_extras, check_partition_conditions
    run = cfg["run"]
    dg = cfg["diag"]
    family = _build_diag_family(cfg)
    n = int(run["n"])
    grid = eval_grid(cfg)
    tol = cfg.get("tolerances", {})
    n_grid = [int(x) for x in dg.get("n_grid", [n])]
    cond = check_partition_conditions(family, n_grid)
    extras = check_functional_extras(
        family, n_grid, eps1=float(dg.get("eps1", 0.1)),
        eps2=float(dg.get("eps2", 0.1)), alpha1=float(dg.get("alpha1", 0.25)),
        alpha2=float(dg.get("alpha2", 0.25)))
    w = map_replicates(_diag_batch, cfg, int(run["replicates"]), workers)
    target = lambda s, t: np.minimum(s, t) ** 2
    report = _ensemble_comparison(cfg, w, grid, target, n)
    report["condition_series"] = {k: list(map(float, v))
                                  for k, v in cond.series.items()}
    report["condition_verdicts"] = {k: bool(v) for k, v in cond.verdicts.items()}
    report["extra_verdicts"] = {k: bool(v) for k, v in extras.verdicts.items()}
    report["op_norms"] = {k: float(v) for k, v in cond.op_norms.items()}
    report["sigma_ratio"] = cond.series["sigma_ratio"][-1] \
        if n_grid[-1] == n else 2 * family.sigma_sq(n) / (n**2 * family.k_n(n))
    report["checks_csv"] = [(label, int(nn), float(v))
                            for label, vals in cond.series.items()
                            for nn, v in zip(n_grid, vals)]
    if "sigma_ratio_band" in tol:
        lo_b, hi_b = tol["sigma_ratio_band"]
        report["verdicts"]["sigma_ratio_in_band"] = bool(
            lo_b <= report["sigma_ratio"] <= hi_b)
    report["verdicts"]["partition_conditions_trend"] = bool(
        cond.verdicts["all"])
    report["paths_csv"] = _paths_rows(w, grid)
    report["pass"] = all(report["verdicts"].values())
    return report


# -- scenario: product_verify ------------------------------------------------------------


def _run_product(cfg: dict) -> dict:
    from .contractions import symmetrize_table
    from .kernels import table_kernel
    from .products import ProductDecomposition
    from .spaces import index_grid
    from .ustat import eval_ustat, hoeffding_g_tables, psi_table_from_g
    pr = cfg["product"]
    seed = int(cfg["run"]["seed"])
    instances = int(pr.get("instances", 30))
    n_max = int(pr.get("n_max", 6))
    atoms_max = int(pr.get("atoms_max", 4))
    recon_tol = float(pr.get("recon_tol", 1e-9))
    gen = RngStream(seed, STREAM_AUX).generator()
    rows = []
    worst_recon = 0.0
    worst_canon = 0.0
    min_slack = math.inf
    for inst in range(instances):
        katoms = int(gen.integers(2, atoms_max + 1))
        weights = gen.dirichlet(np.ones(katoms))
        space = finite(np.arange(float(katoms)), weights / weights.sum())
        while True:
            p = int(gen.integers(1, 3))
            q = int(gen.integers(1, 3))
            if p + q <= int(pr.get("pq_max", 4)):
                break
        n = int(gen.integers(p + q, n_max + 1))
        m = int(gen.integers(n, n_max + 1))

        def degen(order, g):
            raw = symmetrize_table(g.normal(size=(katoms,) * order))
            kern = table_kernel(raw, space, symmetrize_check=False)
            gt = hoeffding_g_tables(kern, space)
            return table_kernel(psi_table_from_g(gt, order), space,
                                symmetrize_check=False)

        psi = degen(p, gen)
        phi = degen(q, gen)
        dec = ProductDecomposition(psi, phi, n, m, space)
        tables = {M: dec.component_table(M) for M in dec.component_sets()}
        recon = 0.0
        for row in index_grid(katoms, m):
            left = eval_ustat(psi, space.atoms[row[:n]])
            right = eval_ustat(phi, space.atoms[row])
            total = sum(float(t[tuple(row[i - 1] for i in M)]) if M else float(t)
                        for M, t in tables.items())
            recon = max(recon, abs(total - left * right))
        canon = 0.0
        slack = math.inf
        for M, t in tables.items():
            for ax in range(t.ndim):
                marg = np.tensordot(t, space.weights, axes=([ax], [0]))
                canon = max(canon, float(np.max(np.abs(marg))))
            slack = min(slack, dec.variance_bound(M) - dec.exact_sd(M))
        worst_recon = max(worst_recon, recon)
        worst_canon = max(worst_canon, canon)
        min_slack = min(min_slack, slack)
        rows.append((inst, katoms, p, q, n, m, recon, canon, slack))
    report = {
        "instances": instances,
        "max_reconstruction_error": worst_recon,
        "max_canonicality_error": worst_canon,
        "min_bound_slack": min_slack,
        "verdicts": {
            "reconstruction_exact": bool(worst_recon < recon_tol),
            "components_canonical": bool(worst_canon < recon_tol),
            "bound_dominates_sd": bool(min_slack >= -1e-12),
        },
        "instances_csv": rows,
    }
    report["pass"] = all(report["verdicts"].values())
    return report


# -- top-level dispatch --------------------------------------------------------------


def run_config(cfg: dict, out_dir, workers: int = 1) -> dict:
    errors = validate_config(cfg)
    if errors:
        raise ValueError("invalid config:\n  " + "\n  ".join(errors))
    kind = cfg["scenario"]["kind"]
    if kind == "condition_check":
        report = _run_condition_check(cfg)
    elif kind == "fclt_verify":
        report = _run_fclt_verify(cfg, workers)
    elif kind == "rgg":
        report = _run_rgg(cfg, workers)
    elif kind == "changepoint":
        report = _run_changepoint(cfg, workers)
    elif kind == "diag_dominant":
        report = _run_diag(cfg, workers)
    elif kind == "product_verify":
        report = _run_product(cfg)
    else:
        raise ValueError(f"unknown scenario {kind!r}")
    report["scenario"] = kind
    report["config_hash"] = config_hash(cfg)
    report["versions"] = {"uproc": __version__,
                          "numpy": np.__version__}
    if out_dir is not None:
        write_artifacts(report, Path(out_dir))
    return report


def write_artifacts(report: dict, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {k: v for k, v in report.items()
               if not k.endswith("_csv") and k != "check_details"}
    (out_dir / "report.json").write_text(
        json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n")
    headers = {
        "checks_csv": ("checks.csv", "check,n,value"),
        "norms_csv": ("norms.csv", "check,n,contraction_norm"),
        "cov_csv": ("cov.csv", "s,t,empirical,target,se"),
        "paths_csv": ("paths.csv", "replicate,t,value"),
        "stats_csv": ("stats.csv", "replicate,max_stat,argmax"),
        "instances_csv": ("instances.csv",
                          "instance,atoms,p,q,n,m,max_recon_error,"
                          "canonical_error,bound_slack"),
    }
    for key, (fname, header) in headers.items():
        if key in report:
            _write_csv(out_dir / fname, header, report[key])


def _write_csv(path: Path, header: str, rows):
    lines = [header]
    for row in rows:
        lines.append(",".join(repr(x) if isinstance(x, float) else str(x)
                              for x in row))
    path.write_text("\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and (math.isnan(obj) or math.isinf(obj)):
        return repr(obj)
    return obj


def emit_plotdata(report: dict, out_dir) -> list:
    """Long-format companions for plotting; one observation per row."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "cov_csv" in report:
        rows = [(s, t, "empirical", v) for s, t, v, _, _ in report["cov_csv"]]
        rows += [(s, t, "target", v) for s, t, _, v, _ in report["cov_csv"]]
        _write_csv(out_dir / "cov_long.csv", "s,t,series,value", rows)
        written.append("cov_long.csv")
    if "checks_csv" in report:
        _write_csv(out_dir / "rates_long.csv", "check,n,value",
                   report["checks_csv"])
        written.append("rates_long.csv")
    if "stats_csv" in report:
        from .limits import bridge_max_cdf
        vals = sorted(v for _, v, _ in report["stats_csv"])
        scaled = [v / math.sqrt(2) for v in vals]
        rows = [(x, (i + 1) / len(scaled), bridge_max_cdf(x))
                for i, x in enumerate(scaled)]
        _write_csv(out_dir / "ecdf.csv", "value,ecdf,target_cdf", rows)
        written.append("ecdf.csv")
    return written
