"""Acceptance suite: one PASS/FAIL line per criterion (or sub-check).

Run with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
Tolerances are pinned; a red line here is a reported result, not a bug to tune away.
"""

import json
import sys
import time
import warnings

import numpy as np
import pytest

from physreg.cli import main as cli_main
from physreg.eigen import (MultiplicityWarning, analytic_eigensystem_neumann_1d,
                           analytic_eigensystem_periodic_2d, numeric_eigensystem,
                           verify_orthonormality)
from physreg.estimator import fit_fixed_K, ise, ise_quadrature, solve_ls
from physreg.evolution import decay_bound_check, generate_observations
from physreg.frap import (frap_fit, grid_ise, read_frames_binary, signal_rms,
                          synthetic_frames, write_frames_binary)
from physreg.operators import BoundaryKind, Lap1D, SL1D
from physreg.simstudy import StudyConfig, compare_methods, run_rate_study, run_table1

from test_estimator import exact_normal_solve

REFERENCE_ISE = [1.318, 0.327, 0.159, 0.373, 1.339]
REFERENCE_BIC = [-471.0, -623.0, -630.4, -627.5, -623.3]


@pytest.fixture
def report(capsys):
    def emit(label, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        return ok
    return emit


@pytest.fixture(scope="module")
def table1():
    t0 = time.perf_counter()
    rep = run_table1(StudyConfig(), threads=1)
    return rep, time.perf_counter() - t0


# -- 1. cutoff study--------------------------------------------------------------

def test_c1a_cutoff_study_ise_k1_to_k3(table1, report):
    rep, _ = table1
    rel = [rep.cells[j]["mean_ise"] / REFERENCE_ISE[j] - 1 for j in range(3)]
    ok = all(abs(r) <= 0.05 for r in rel)
    report("C1a cutoff study mean ISE, K=1..3 within 5%", ok,
           ", ".join(f"K={j + 1}: {rep.cells[j]['mean_ise']:.4f} ({rel[j]:+.1%})"
                     for j in range(3)))
    assert ok


def test_c1b_cutoff_study_ise_k4_k5(table1, report):
    rep, _ = table1
    rel = [rep.cells[j]["mean_ise"] / REFERENCE_ISE[j] - 1 for j in (3, 4)]
    ok = all(abs(r) <= 0.15 for r in rel)
    report("C1b cutoff study mean ISE, K=4..5 within 15%", ok,
           ", ".join(f"K={j + 1}: {rep.cells[j]['mean_ise']:.4f} ({r:+.1%})"
                     for j, r in zip((3, 4), rel)))
    assert ok


def test_c1c_cutoff_study_bic(table1, report):
    rep, _ = table1
    diff = [rep.cells[j]["mean_bic"] - REFERENCE_BIC[j] for j in range(5)]
    ok = all(abs(d) <= 3.0 for d in diff)
    report("C1c cutoff study mean BIC within 3", ok,
           ", ".join(f"K={j + 1}: {rep.cells[j]['mean_bic']:.2f} ({d:+.2f})"
                     for j, d in enumerate(diff)))
    assert ok


def test_c1d_cutoff_study_bic_argmin_frequency(table1, report):
    rep, _ = table1
    freq = rep.cells[2]["bic_argmin_frequency"]
    ok = freq >= 0.9
    report("C1d BIC argmin at K=3 in at least 90% of replications", ok,
           "frequencies " + ", ".join(f"K={c['K']}: {c['bic_argmin_frequency']:.3f}"
                                      for c in rep.cells))
    assert ok


def test_c1e_cutoff_study_runtime(table1, report):
    _, secs = table1
    ok = secs < 30.0
    report("C1e cutoff study runtime under 30 s single-threaded", ok, f"{secs:.2f} s")
    assert ok


# -- 2. rate study ------------------------------------------------------------

def test_c2_rate_study_slope(report):
    cfg = StudyConfig(n_values=[200, 400, 800, 1600, 3200], sigma_values=[0.2], reps=200,
                      k_range=range(1, 13))
    t0 = time.perf_counter()
    rep = run_rate_study(cfg, threads=1)
    secs = time.perf_counter() - t0
    slope = rep.slopes["0.2"]["spectral"]
    ok = -0.6 <= slope <= -0.4 and secs < 300
    report("C2 rate-study log-log slope in [-0.6, -0.4], runtime under 5 min", ok,
           f"slope {slope:.4f} (se {rep.slopes['0.2']['spectral_se']:.4f}), {secs:.1f} s; "
           "oracle K " + ", ".join(f"n={c['n']}:{c['oracle_K']}" for c in rep.cells))
    assert ok


# -- 3. method comparison -----------------------------------------------------

def test_c3_spectral_beats_penalized(report):
    rep = compare_methods(StudyConfig(k_range=range(1, 13)), n=3200, sigma=0.1, threads=4)
    c = rep.cells[0]
    ok = c["spectral_mean_ise"] <= c["penalized_mean_ise"]
    report("C3 spectral (oracle K) mean ISE <= penalized (oracle lambda) at n=3200, sigma=0.1",
           ok, f"spectral {c['spectral_mean_ise']:.4f} (K={c['oracle_K']}), penalized "
               f"{c['penalized_mean_ise']:.4f} (lambda={c['penalized_oracle_lambda']:g})")
    assert ok


# -- 4. eigen correctness -----------------------------------------------------

def test_c4a_numeric_neumann_eigenvalues(report):
    eig = numeric_eigensystem(Lap1D(1.0), count=11, resolution=128)
    k = np.arange(1, 11)
    rel = np.abs(eig.eigenvalues[1:11] - (k * np.pi) ** 2) / (k * np.pi) ** 2
    ok = rel.max() <= 1e-6
    report("C4a collocation Neumann eigenvalues match (k pi)^2 to 1e-6, k<=10, N=128", ok,
           f"max relative error {rel.max():.2e}")
    assert ok


def test_c4b_orthonormality_shipped(report):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MultiplicityWarning)
        systems = {
            "neumann analytic K=50": analytic_eigensystem_neumann_1d(50),
            "periodic 2D analytic (7,7)": analytic_eigensystem_periodic_2d(1.945e-4, 8.9e-11,
                                                                           (7, 7)),
            "neumann collocation K=20": numeric_eigensystem(Lap1D(1.0), count=20),
            "dirichlet collocation K=20": numeric_eigensystem(
                Lap1D(1.0, boundary=BoundaryKind.DIRICHLET), count=20),
            "periodic collocation K=20": numeric_eigensystem(
                Lap1D(1.0, boundary=BoundaryKind.PERIODIC), count=20, resolution=64),
            "sturm-liouville collocation K=20": numeric_eigensystem(
                SL1D.from_polynomials([0.5, -1.0], [1.0, 0.0, 2.0]), count=20),
        }
    devs = {name: verify_orthonormality(e, 4096) for name, e in systems.items()}
    ok = max(devs.values()) <= 1e-8
    report("C4b orthonormality deviation <= 1e-8 on 4096-point quadrature", ok,
           ", ".join(f"{k}: {v:.1e}" for k, v in devs.items()))
    assert ok


# -- 5. estimator exactness ---------------------------------------------------

def test_c5_estimator_exactness(report):
    eig = analytic_eigensystem_neumann_1d(50)
    rng = np.random.default_rng(5)
    alpha = rng.standard_normal(6)
    obs = generate_observations(alpha, eig, 400, 0.0, seed=5)
    rec = np.max(np.abs(fit_fixed_K(obs, eig, 6).alpha_hat - alpha))

    worst = 0.0
    for _ in range(100):
        n, K = int(rng.integers(8, 30)), int(rng.integers(1, 6))
        Z = rng.standard_normal((n, K))
        u = rng.standard_normal(n)
        ref = exact_normal_solve(Z, u)
        worst = max(worst, np.max(np.abs(solve_ls(Z, u) - ref)) / np.max(np.abs(ref)))

    from physreg.simstudy import reference_truth
    truth = reference_truth()
    noisy = generate_observations(truth, eig, 200, 0.2, seed=6)
    pars = max(abs(ise_quadrature(f, truth, eig) / ise(f, truth) - 1)
               for f in (fit_fixed_K(noisy, eig, K) for K in range(1, 6)))
    ok = rec <= 1e-8 and worst <= 1e-8 and pars <= 1e-6
    report("C5 noiseless recovery 1e-8, exact-oracle agreement 1e-8, Parseval 1e-6", ok,
           f"recovery {rec:.1e}, oracle {worst:.1e} relative, Parseval {pars:.1e} relative")
    assert ok


# -- 6. decay bound -----------------------------------------------------------

def test_c6_decay_bound(report):
    eig = analytic_eigensystem_neumann_1d(50)
    rng = np.random.default_rng(6)
    margin, tight = -np.inf, 0.0
    for _ in range(1000):
        m = int(rng.integers(1, 51))
        c = rng.standard_normal(m) * 10.0 ** rng.uniform(-3, 3)
        t = rng.uniform(0.0, 2.0)
        (row,) = decay_bound_check(c, eig, [t])
        margin = max(margin, row.lhs - row.rhs)
        (zero,) = decay_bound_check(c, eig, [0.0])
        tight = max(tight, abs(zero.lhs - zero.rhs))
    ok = margin <= 1e-12 and tight == 0.0
    report("C6 decay bound on 1000 random cases, equality at t=0", ok,
           f"max lhs - rhs {margin:.2e}, max |lhs - rhs| at t=0 {tight:.1e}")
    assert ok


# -- 7. FRAP at desk scale ----------------------------------------------------

@pytest.fixture(scope="module")
def frap_runs():
    clean = synthetic_frames(64, 20, sigma=0.0)
    noisy = synthetic_frames(64, 20, sigma=0.05, seed=1)
    return clean, frap_fit(clean.stack, cutoff=(7, 7)), noisy, frap_fit(noisy.stack, cutoff=(7, 7))


def test_c7a_frap_noiseless_residual(frap_runs, report):
    _, fit0, _, _ = frap_runs
    ok = fit0.residual_max <= 1e-8
    report("C7a FRAP 64x64x20 sigma=0 residual max <= 1e-8", ok,
           f"residual max {fit0.residual_max:.2e}")
    assert ok


def test_c7b_frap_noisy_ise_vs_noiseless(frap_runs, report):
    clean, fit0, noisy, fit1 = frap_runs
    px = clean.stack.pixel_size
    ise0 = grid_ise(fit0.initial_condition, clean.initial_grid, px)
    ise1 = grid_ise(fit1.initial_condition, noisy.initial_grid, px)
    ok = ise1 <= 10 * ise0
    report("C7b FRAP sigma=0.05 initial-condition ISE <= 10x noiseless ISE", ok,
           f"noisy {ise1:.3e}, noiseless {ise0:.3e} (ratio {ise1 / max(ise0, 1e-300):.1e})")
    assert ok


def test_c7c_frap_noisy_residual_rms(frap_runs, report):
    _, _, noisy, fit1 = frap_runs
    sig = signal_rms(noisy.stack)
    ok = sig >= 10 * fit1.residual_rms
    report("C7c FRAP sigma=0.05 residual rms at least 10x below signal rms", ok,
           f"signal rms {sig:.4f}, residual rms {fit1.residual_rms:.4f} "
           f"(ratio {sig / fit1.residual_rms:.1f})")
    assert ok


def test_c7d_frap_streamed_bit_equality(frap_runs, tmp_path, report):
    _, _, noisy, fit1 = frap_runs
    path = write_frames_binary(noisy.stack, tmp_path / "frames.f64")
    mapped = read_frames_binary(path, mmap=True)
    streamed = frap_fit(mapped, cutoff=(7, 7), force_streamed=True, frames_per_chunk=4)
    again = frap_fit(noisy.stack, cutoff=(7, 7), force_streamed=True, frames_per_chunk=4)
    bit_equal = (np.array_equal(streamed.fit.alpha_hat, again.fit.alpha_hat)
                 and np.array_equal(streamed.residuals, again.residuals))
    rel = np.max(np.abs(streamed.fit.alpha_hat - fit1.fit.alpha_hat)) / np.max(
        np.abs(fit1.fit.alpha_hat))
    ok = bit_equal and streamed.streamed and rel <= 1e-9
    report("C7d streamed accumulation bit-equal to in-memory chunked solve", ok,
           f"bit-equal {bit_equal}, vs QR solver {rel:.1e} relative")
    assert ok


# -- 8. determinism -----------------------------------------------------------

def _run_cli(tmp_path, name, cfg, *args):
    cfg_path = tmp_path / f"{name}.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = cli_main(["--config", str(cfg_path), "--out", str(out), "--seed", "42", *args])
    return code, {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_c8_determinism(tmp_path, report):
    sim = {"simulation": {"n": 200, "sigma": 0.2}}
    cases = [
        ("simulate", sim, ["simulate"]),
        ("fit", {**sim, "k_range": [1, 8]}, ["fit"]),
        ("select", {**sim, "k_range": [1, 8]}, ["select"]),
        ("table1", {"study": {"reps": 40}}, ["table1"]),
        ("rate", {"study": {"n_values": [100, 200, 400, 1000], "reps": 20,
                            "include_baseline": True}}, ["rate-study", "--plot-data"]),
        ("frap", {"synthetic_frames": {"size": 32, "frames": 8, "sigma": 0.05}},
         ["frap-fit"]),
        ("diag", {"diagnostics": {"mc_draws": 20000}}, ["diagnostics"]),
    ]
    failures = []
    for name, cfg, args in cases:
        runs = [_run_cli(tmp_path, f"{name}{i}", cfg, *args, "--threads", str(th))
                for i, th in enumerate((1, 1, 4))]
        if any(code != 0 for code, _ in runs) or not (runs[0][1] == runs[1][1] == runs[2][1]):
            failures.append(name)
    ok = not failures
    report("C8 byte-identical outputs across runs and worker counts", ok,
           f"{len(cases)} commands checked" + (f", differing: {failures}" if failures else ""))
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
