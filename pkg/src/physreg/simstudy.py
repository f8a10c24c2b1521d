"""Monte Carlo harness: fixed-cutoff table, rate study, assumption diagnostics.

Replication ``r`` always draws from :func:`physreg.evolution.substream`
``(seed, r)``, and results are aggregated in replication order, so reports
are bit-identical whatever the number of worker threads.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .eigen import EigenSystem, analytic_eigensystem_neumann_1d
from .estimator import (BIC_TIE_ATOL, RankDeficient, TheoryParams,
                        build_design, fit_fixed_K, ise)
from .evolution import UNIFORM, generate_observations, substream
from .operators import Lap1D
from .penalized import PenalizedSpec, PenalizedSystem, SingularSystem, penalized_ise

DEFAULT_SEED = 20240229
REFERENCE_THEORY = TheoryParams(r=2.0, s=2.0, c=0.5)


def reference_truth(s=2.0, count=50, first=0.3, scale=4.0) -> np.ndarray:
    """``alpha_1 = first`` and ``alpha_k = scale (-1)^(k-1) k^(-s)`` for k >= 2."""
    k = np.arange(1, count + 1, dtype=float)
    alpha = scale * (-1.0) ** (k - 1) * k ** (-s)
    alpha[0] = first
    return alpha


@dataclass
class StudyConfig:
    truth: np.ndarray = field(default_factory=reference_truth)
    eig: EigenSystem = field(default_factory=lambda: analytic_eigensystem_neumann_1d(50))
    n_values: list = field(default_factory=lambda: [200])
    sigma_values: list = field(default_factory=lambda: [0.2])
    reps: int = 200
    seed: int = DEFAULT_SEED
    k_range: range = range(1, 6)
    theory: TheoryParams = REFERENCE_THEORY
    include_baseline: bool = False
    baseline_spec: Optional[PenalizedSpec] = None
    lambda_grid: tuple = tuple(np.logspace(-8, 2, 21))
    sampling: object = UNIFORM

    def __post_init__(self):
        self.truth = np.asarray(self.truth, dtype=float)
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        self.k_range = range(min(self.k_range), max(self.k_range) + 1)
        if max(self.k_range) > self.eig.count:
            raise ValueError("k_range exceeds the eigensystem size")
        if min(self.n_values) < max(self.k_range):
            raise ValueError("every n must be at least max(k_range)")
        if self.include_baseline and self.baseline_spec is None:
            self.baseline_spec = PenalizedSpec(Lap1D(1.0, self.eig.domain))

    def summary(self) -> dict:
        return {"n_values": [int(n) for n in self.n_values],
                "sigma_values": [float(s) for s in self.sigma_values],
                "reps": int(self.reps), "seed": int(self.seed),
                "k_range": [min(self.k_range), max(self.k_range)],
                "theory": {"r": self.theory.r, "s": self.theory.s, "c": self.theory.c},
                "include_baseline": bool(self.include_baseline),
                "truth_length": int(self.truth.size)}


@dataclass
class StudyReport:
    kind: str
    cells: list
    config: dict
    slopes: dict = field(default_factory=dict)
    theoretical_slope: Optional[float] = None
    raw: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "config": self.config, "cells": self.cells,
                "slopes": self.slopes, "theoretical_slope": self.theoretical_slope}

    def to_csv(self) -> str:
        keys = []
        for cell in self.cells:
            keys.extend(k for k in cell if k not in keys and not isinstance(cell[k], (list, dict)))
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for cell in self.cells:
            w.writerow({k: _fmt(cell.get(k)) for k in keys})
        return buf.getvalue()

    def plot_data_csv(self) -> str:
        """Rate-study curves: one row per (method, sigma, n)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "sigma", "n", "mean_ise", "mean_minus_sd", "mean_plus_sd"])
        for cell in self.cells:
            for method in ("spectral", "penalized"):
                m = cell.get(f"{method}_mean_ise")
                if m is None:
                    continue
                sd = cell[f"{method}_sd_ise"]
                w.writerow([method, _fmt(cell["sigma"]), cell["n"], _fmt(m),
                            _fmt(m - sd), _fmt(m + sd)])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return "" if v is None else v


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _moments(values):
    values = np.asarray(values, dtype=float)
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return float("nan"), float("nan"), float("nan")
    mean = float(finite.mean())
    sd = float(finite.std(ddof=1)) if finite.size > 1 else 0.0
    return mean, sd, sd / math.sqrt(finite.size)


def _bic_argmin(bics, ks):
    best = None
    for K, b in zip(ks, bics):
        if not np.isfinite(b) and not (np.isinf(b) and b < 0):
            continue
        if best is None:
            best = (K, b)
            continue
        if b == best[1]:
            continue
        if np.isinf(b) or np.isinf(best[1]):
            if b < best[1]:
                best = (K, b)
        elif b < best[1] - BIC_TIE_ATOL:
            best = (K, b)
    return None if best is None else best[0]


def _fixed_K_replication(config, n, sigma, rep, ks):
    obs = generate_observations(config.truth, config.eig, n, sigma,
                                config.sampling, config.seed, rep)
    Z = build_design(obs, config.eig, ks[-1])
    ises, bics = [], []
    for K in ks:
        try:
            fit = fit_fixed_K(obs, config.eig, K, design=Z)
        except RankDeficient:
            ises.append(float("nan"))
            bics.append(float("nan"))
            continue
        ises.append(ise(fit, config.truth))
        bics.append(fit.bic)
    return obs, np.array(ises), np.array(bics)


def run_table1(config: StudyConfig, threads=1) -> StudyReport:
    """ISE and BIC at each fixed cutoff, plus BIC-argmin frequencies."""
    n, sigma = int(config.n_values[0]), float(config.sigma_values[0])
    ks = list(config.k_range)

    def one(rep):
        _, i, b = _fixed_K_replication(config, n, sigma, rep, ks)
        return i, b

    results = _map(one, range(config.reps), threads)
    ISE = np.array([r[0] for r in results])
    BIC = np.array([r[1] for r in results])
    picks = [_bic_argmin(row, ks) for row in BIC]
    cells = []
    for j, K in enumerate(ks):
        mi, si, ei = _moments(ISE[:, j])
        mb, sb, eb = _moments(BIC[:, j])
        cells.append({
            "K": K, "n": n, "sigma": sigma,
            "mean_ise": mi, "sd_ise": si, "se_ise": ei,
            "mean_bic": mb, "sd_bic": sb, "se_bic": eb,
            "bic_argmin_frequency": sum(p == K for p in picks) / config.reps,
            "tail": float(np.sum(config.truth[K:] ** 2)),
            "rank_deficient_reps": int(np.sum(~np.isfinite(ISE[:, j]))),
        })
    return StudyReport("table1", cells, config.summary(),
                       raw={"ise": ISE, "bic": BIC, "picks": picks, "ks": ks})


def loglog_slope(n_values, means):
    """OLS slope (and its standard error) of ``log mean`` against ``log n``."""
    res = stats.linregress(np.log(n_values), np.log(means))
    return float(res.slope), float(res.stderr)


def _rate_cell(config: StudyConfig, n, sigma, threads=1, include_baseline=None):
    """One (n, sigma) cell with oracle K (and oracle lambda for the baseline)."""
    include_baseline = config.include_baseline if include_baseline is None else include_baseline
    ks = list(config.k_range)
    grid = [float(v) for v in config.lambda_grid]
    spec = config.baseline_spec or PenalizedSpec(Lap1D(1.0, config.eig.domain))

    def one(rep):
        obs, i, b = _fixed_K_replication(config, n, sigma, rep, ks)
        pen = None
        if include_baseline:
            system = PenalizedSystem(obs, spec)
            pen = []
            for lam in grid:
                try:
                    pen.append(penalized_ise(system.solve(lam), config.truth, config.eig))
                except SingularSystem:
                    pen.append(float("inf"))
        return i, b, pen

    results = _map(one, range(config.reps), threads)
    ISE = np.array([r[0] for r in results])
    BIC = np.array([r[1] for r in results])
    mean_by_K = np.array([_moments(ISE[:, j])[0] for j in range(len(ks))])
    mean_by_K = np.where(np.isfinite(mean_by_K), mean_by_K, np.inf)
    j_star = int(np.argmin(mean_by_K))
    m, sd, se = _moments(ISE[:, j_star])
    picks = [_bic_argmin(row, ks) for row in BIC]
    bic_ise = [ISE[r, ks.index(p)] if p is not None else np.nan
               for r, p in enumerate(picks)]
    mb, sdb, _ = _moments(bic_ise)
    valid = [p for p in picks if p is not None]
    cell = {"n": int(n), "sigma": float(sigma), "oracle_K": ks[j_star],
            "spectral_mean_ise": m, "spectral_sd_ise": sd, "spectral_se_ise": se,
            "bic_mean_ise": mb, "bic_sd_ise": sdb,
            "bic_modal_K": max(set(valid), key=lambda k: (valid.count(k), -k)) if valid else None}
    raw = {"spectral": ISE[:, j_star]}
    if include_baseline:
        PEN = np.array([r[2] for r in results])
        pm = np.array([_moments(PEN[:, j])[0] for j in range(len(grid))])
        pm = np.where(np.isfinite(pm), pm, np.inf)
        jl = int(np.argmin(pm))
        pmean, psd, pse = _moments(PEN[:, jl])
        cell.update(penalized_oracle_lambda=grid[jl], penalized_mean_ise=pmean,
                    penalized_sd_ise=psd, penalized_se_ise=pse)
        raw["penalized"] = PEN[:, jl]
    return cell, raw


def run_rate_study(config: StudyConfig, threads=1) -> StudyReport:
    """Mean ISE against ``n`` for each ``sigma`` with oracle (min mean ISE) tuning.

    The log-log slope is fitted by OLS on the per-cell mean ISE values.
    """
    ns = sorted(set(int(n) for n in config.n_values))
    if len(ns) < 4:
        raise ValueError("rate study needs at least 4 distinct sample sizes")
    if ns[-1] < 10 * ns[0]:
        raise ValueError("sample sizes must span at least one decade")
    cells, raw, slopes = [], {}, {}
    for sigma in config.sigma_values:
        sigma = float(sigma)
        for n in ns:
            cell, r = _rate_cell(config, n, sigma, threads)
            cells.append(cell)
            raw[(n, sigma)] = r
        here = [c for c in cells if c["sigma"] == sigma]
        slope, err = loglog_slope(ns, [c["spectral_mean_ise"] for c in here])
        entry = {"spectral": slope, "spectral_se": err}
        if config.include_baseline:
            ps, pe = loglog_slope(ns, [c["penalized_mean_ise"] for c in here])
            entry.update(penalized=ps, penalized_se=pe)
        slopes[format(sigma, "g")] = entry
    return StudyReport("rate_study", cells, config.summary(), slopes,
                       config.theory.rate_exponent, raw)


def compare_methods(config: StudyConfig, n=3200, sigma=0.1, threads=1) -> StudyReport:
    """Spectral (oracle K) against penalized (oracle lambda) at a single cell."""
    cell, raw = _rate_cell(config, int(n), float(sigma), threads, include_baseline=True)
    return StudyReport("method_comparison", [cell], config.summary(), raw={(n, sigma): raw})


# -- assumption diagnostics -----------------------------------------------------

def _uniform_damping_mean(lam, horizon, power=2.0):
    """``E exp(-power * lam * T)`` for ``T ~ U[0, horizon]``."""
    z = power * np.asarray(lam, dtype=float) * horizon
    out = np.ones_like(z)
    nz = z > 0
    out[nz] = -np.expm1(-z[nz]) / z[nz]
    return out


def assumption_diagnostics(eig: EigenSystem, theory: TheoryParams = REFERENCE_THEORY,
                           mc_draws=10 ** 5, truth=None, k_values=(2, 4, 8, 16),
                           seed=DEFAULT_SEED, chunk=50_000) -> dict:
    """Monte Carlo checks of the moment, eigenvalue and tail assumptions.

    Locations and times are drawn uniformly. For each ``K`` the report holds
    the (A1) fourth moment, the (A2) smallest eigenvalue of ``E Z Z^T`` and,
    when ``truth`` is given, the (A3) tail quantities. Exponents are OLS
    slopes on log-log scale over ``k_values``; ``tail_exponent`` uses only the
    last two values of ``K``.
    """
    if mc_draws < 10 ** 4:
        raise ValueError("mc_draws must be at least 1e4")
    ks = sorted(int(k) for k in k_values)
    Kmax = ks[-1]
    if Kmax > eig.count:
        raise ValueError("k_values exceed the eigensystem size")
    rng = substream(seed, 0)
    dom = eig.domain
    lo = np.array([a for a, _ in dom.bounds])
    hi = np.array([b for _, b in dom.bounds])
    gram = np.zeros((Kmax, Kmax))
    a1 = np.zeros(len(ks))
    tail_mc = np.zeros(len(ks))
    alpha = None if truth is None else np.asarray(truth, dtype=float)
    done = 0
    while done < mc_draws:
        m = min(chunk, mc_draws - done)
        x = lo + (hi - lo) * rng.random((m, dom.dimension))
        t = dom.time_horizon * rng.random(m)
        Z = build_design(x, eig, Kmax, t=t)
        gram += Z.T @ Z
        cum = np.cumsum(Z ** 2, axis=1)
        for j, K in enumerate(ks):
            a1[j] += np.sum(cum[:, K - 1] ** 2)
        if alpha is not None:
            Zt = build_design(x, eig, alpha.size, t=t)
            for j, K in enumerate(ks):
                tail_mc[j] += np.sum((Zt[:, K:] @ alpha[K:]) ** 2)
        done += m
    gram /= mc_draws
    a1 /= mc_draws
    nu = np.array([np.linalg.eigvalsh(gram[:K, :K])[0] for K in ks])

    def exponents(vals):
        logk, logv = np.log(ks), np.log(vals)
        slope = float(np.polyfit(logk, logv, 1)[0])
        tail = float((logv[-1] - logv[-2]) / (logk[-1] - logk[-2]))
        return slope, tail

    report = {"k_values": ks, "mc_draws": int(mc_draws), "seed": int(seed)}
    s1, t1 = exponents(a1)
    report["A1"] = {"values": a1.tolist(), "fitted_exponent": s1, "tail_exponent": t1,
                    "theoretical_exponent": theory.c}
    s2, t2 = exponents(nu)
    report["A2"] = {"values": nu.tolist(), "fitted_exponent": s2, "tail_exponent": t2,
                    "theoretical_exponent": -theory.r}
    if alpha is not None:
        tail_sq = np.array([float(np.sum(alpha[K:] ** 2)) for K in ks])
        lam = eig.eigenvalues[:alpha.size]
        damp = _uniform_damping_mean(lam, dom.time_horizon) / dom.volume
        # orthonormal psi under uniform X: E psi_k psi_l = delta_kl / |X|
        expected = np.array([float(np.sum(alpha[K:] ** 2 * damp[K:])) for K in ks])
        tail_mc /= mc_draws
        sa, ta = exponents(tail_sq)
        sb, tb = exponents(tail_mc)
        report["A3"] = {
            "coefficient_tail": tail_sq.tolist(),
            "coefficient_tail_fitted_exponent": sa, "coefficient_tail_tail_exponent": ta,
            "coefficient_tail_theoretical_exponent": -(2 * theory.s - 1),
            "prediction_tail_mc": tail_mc.tolist(),
            "prediction_tail_expected": expected.tolist(),
            "prediction_tail_fitted_exponent": sb, "prediction_tail_tail_exponent": tb,
            "prediction_tail_theoretical_exponent": -(theory.r + 2 * theory.s - 1),
        }
    return report
