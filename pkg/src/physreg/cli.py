"""Command-line front end.

Every subcommand reads an optional JSON run configuration, writes its outputs
atomically under ``--out`` and exits with 0 on success, 1 on I/O or
configuration errors and 2 on numerical infeasibility.

Run configuration keys (all optional unless a command needs them)::

    operator        operator JSON object, or a path to one
    eigen           {"count": 50, "resolution": 128, "cutoff": [K1, K2]}
    data            path to an observation CSV          (exclusive with simulation)
    simulation      {"n", "sigma", "truth", "sampling"} (exclusive with data)
    k_range         [k_min, k_max] or an explicit list
    K               fixed cutoff for ``fit``
    seed            integer
    study           {"n_values", "sigma_values", "reps", "k_range",
                     "include_baseline", "lambda_grid"}
    frames          path to a binary frame file or CSV frame directory
    synthetic_frames  {"size", "frames", "sigma", "cutoff", "in_span", "time_offset"}
    cutoff          [K1, K2] for ``frap-fit``
    memory_budget   bytes allowed for an in-memory FRAP design matrix
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import frap as frap_mod
from .eigen import (analytic_eigensystem_neumann_1d, analytic_eigensystem_periodic_2d,
                    numeric_eigensystem, verify_orthonormality)
from .estimator import NoFeasibleCutoff, fit_fixed_K, select_K
from .evolution import UNIFORM, generate_observations, sampling_from_meta
from .fileio import (atomic_write_text, read_observations, surface_csv_text,
                     write_json, write_observations)
from .operators import BoundaryKind, Lap1D, Lap2D, operator_from_dict, operator_to_dict
from .penalized import DegenerateGCV
from .simstudy import (DEFAULT_SEED, StudyConfig, assumption_diagnostics, reference_truth,
                       run_rate_study, run_table1)

EXIT_OK, EXIT_IO, EXIT_NUMERIC = 0, 1, 2


class ConfigError(ValueError):
    pass


# -- configuration ------------------------------------------------------------

def load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ConfigError("run configuration must be a JSON object")
    cfg["_base"] = str(Path(path).resolve().parent)
    return cfg


def _resolve(cfg, value):
    p = Path(value)
    return p if p.is_absolute() or "_base" not in cfg else Path(cfg["_base"]) / p


def _operator(cfg):
    op = cfg.get("operator")
    if op is None:
        return Lap1D(1.0)
    if isinstance(op, str):
        with open(_resolve(cfg, op)) as fh:
            op = json.load(fh)
    return operator_from_dict(op)


def build_eigensystem(cfg, count=None):
    spec = _operator(cfg)
    e = cfg.get("eigen", {})
    if isinstance(spec, Lap2D):
        cutoff = e.get("cutoff") or cfg.get("cutoff") or [7, 7]
        return spec, analytic_eigensystem_periodic_2d(spec.domain.lengths[0],
                                                      spec.diffusion, cutoff, spec.domain)
    count = int(e.get("count", count or 50))
    if isinstance(spec, Lap1D) and spec.boundary == BoundaryKind.NEUMANN:
        return spec, analytic_eigensystem_neumann_1d(count, spec.diffusion, spec.domain)
    return spec, numeric_eigensystem(spec, count=count,
                                     resolution=int(e.get("resolution", 128)))


def _truth(block, eig):
    truth = block.get("truth", {"kind": "power", "s": 2.0})
    if isinstance(truth, list):
        return np.asarray(truth, dtype=float)
    if truth.get("kind") == "power":
        return reference_truth(float(truth.get("s", 2.0)), int(truth.get("count", eig.count)),
                           float(truth.get("first", 0.3)), float(truth.get("scale", 4.0)))
    raise ConfigError(f"unknown truth specification {truth!r}")


def _k_range(value, default):
    if value is None:
        return default
    if isinstance(value, (list, tuple)) and len(value) == 2 and value[1] >= value[0]:
        return range(int(value[0]), int(value[1]) + 1)
    return [int(k) for k in value]


def _data_source(cfg, required=True):
    has_data, has_sim = "data" in cfg, "simulation" in cfg
    if has_data and has_sim:
        raise ConfigError("give exactly one of 'data' and 'simulation'")
    if required and not (has_data or has_sim):
        raise ConfigError("the configuration needs a 'data' path or a 'simulation' block")
    return "data" if has_data else "simulation" if has_sim else None


def _simulate(cfg, args, eig):
    block = dict(cfg.get("simulation", {}))
    if getattr(args, "n", None) is not None:
        block["n"] = args.n
    if getattr(args, "sigma", None) is not None:
        block["sigma"] = args.sigma
    sampling = sampling_from_meta(block["sampling"]) if "sampling" in block else UNIFORM
    return generate_observations(_truth(block, eig), eig, int(block.get("n", 200)),
                                 float(block.get("sigma", 0.2)), sampling, seed=args.seed)


def _observations(cfg, args, eig):
    if _data_source(cfg) == "data":
        return read_observations(_resolve(cfg, cfg["data"]))
    return _simulate(cfg, args, eig)


# -- commands -----------------------------------------------------------------

def cmd_simulate(cfg, args):
    _data_source(cfg, required=False)
    if "data" in cfg:
        raise ConfigError("simulate needs a 'simulation' block, not a data path")
    _, eig = build_eigensystem(cfg)
    obs = _simulate(cfg, args, eig)
    return [write_observations(obs, args.out / "observations.csv")]


def cmd_fit(cfg, args):
    spec, eig = build_eigensystem(cfg)
    obs = _observations(cfg, args, eig)
    K = getattr(args, "K", None) or cfg.get("K")
    if K is not None:
        fit = fit_fixed_K(obs, eig, int(K))
    else:
        fit = select_K(obs, eig, _k_range(cfg.get("k_range"), None))
    seed_meta = {"seed": obs.seed, "n": obs.n, "noise_sd": obs.noise_sd}
    out = [write_json(args.out / "fit.json", fit.to_dict(operator_to_dict(spec), seed_meta))]

    def evaluate(x, t):
        return (np.exp(-np.outer(t, eig.eigenvalues[:fit.K]))
                * eig.psi(x, fit.K)) @ fit.alpha_hat

    out.append(atomic_write_text(args.out / "surface.csv",
                                 surface_csv_text(evaluate, eig.domain)))
    return out


def cmd_select(cfg, args):
    _, eig = build_eigensystem(cfg)
    obs = _observations(cfg, args, eig)
    fit = select_K(obs, eig, _k_range(cfg.get("k_range"), None))
    table = fit.diagnostics["bic_table"]
    rows = ["K,bic"] + [f"{k},{v!r}" for k, v in table.items()]
    return [write_json(args.out / "select.json",
                       {"selected_K": fit.K, "bic_table": table,
                        "rank_deficient": fit.diagnostics["rank_deficient"]}),
            atomic_write_text(args.out / "select.csv", "\n".join(rows) + "\n")]


def _study_config(cfg, args, defaults):
    _, eig = build_eigensystem(cfg)
    block = {**defaults, **cfg.get("study", {})}
    if getattr(args, "reps", None) is not None:
        block["reps"] = args.reps
    kw = dict(truth=_truth(cfg.get("simulation", {}), eig), eig=eig,
              n_values=block["n_values"], sigma_values=block["sigma_values"],
              reps=int(block["reps"]), seed=args.seed,
              k_range=_k_range(block.get("k_range"), range(1, 6)),
              include_baseline=bool(block.get("include_baseline", False)))
    if "lambda_grid" in block:
        kw["lambda_grid"] = tuple(float(v) for v in block["lambda_grid"])
    return StudyConfig(**kw)


def _write_report(report, stem, args):
    out = [write_json(args.out / f"{stem}.json", report.to_dict()),
           atomic_write_text(args.out / f"{stem}.csv", report.to_csv())]
    if args.plot_data:
        out.append(atomic_write_text(args.out / f"{stem}_plot.csv", report.plot_data_csv()))
    return out


def cmd_table1(cfg, args):
    config = _study_config(cfg, args, {"n_values": [200], "sigma_values": [0.2], "reps": 200})
    return _write_report(run_table1(config, threads=args.threads), "table1", args)


def cmd_rate_study(cfg, args):
    config = _study_config(cfg, args, {"n_values": [200, 400, 800, 1600, 3200],
                                       "sigma_values": [0.2], "reps": 200,
                                       "k_range": [1, 12]})
    return _write_report(run_rate_study(config, threads=args.threads), "rate_study", args)


def cmd_frap_fit(cfg, args):
    frames_path = getattr(args, "frames", None) or cfg.get("frames")
    synth = cfg.get("synthetic_frames")
    if (frames_path is None) == (synth is None):
        raise ConfigError("give exactly one of 'frames' and 'synthetic_frames'")
    if frames_path is not None:
        stack = frap_mod.read_frames(_resolve(cfg, frames_path), mmap=True)
    else:
        stack = frap_mod.synthetic_frames(
            size=int(synth.get("size", 64)), frames=int(synth.get("frames", 20)),
            sigma=float(synth.get("sigma", 0.0)), seed=args.seed,
            cutoff=tuple(synth.get("cutoff", (7, 7))),
            in_span=bool(synth.get("in_span", True)),
            time_offset=float(synth.get("time_offset", 0.0))).stack
    cutoff = getattr(args, "cutoff", None) or cfg.get("cutoff")
    k_range = getattr(args, "k_range", None) or cfg.get("k_range")
    if cutoff is None and k_range is None:
        cutoff = (7, 7)
    result = frap_mod.frap_fit(
        stack, cutoff=cutoff, k_range=_k_range(k_range, None) if cutoff is None else None,
        memory_budget=int(cfg.get("memory_budget", frap_mod.DEFAULT_MEMORY_BUDGET)))
    R, C = stack.grid
    g0 = result.initial_condition
    pts = stack.pixel_centers()
    lines = ["x1,x2,g0_hat"] + [f"{a:.17g},{b:.17g},{v:.17g}"
                                for (a, b), v in zip(pts, g0.ravel())]
    return [write_json(args.out / "frap_fit.json", result.to_dict(stack)),
            frap_mod.write_frames_binary(frap_mod.residual_stack(result, stack),
                                         args.out / "residuals.f64"),
            atomic_write_text(args.out / "initial_condition.csv", "\n".join(lines) + "\n")]


def cmd_diagnostics(cfg, args):
    _, eig = build_eigensystem(cfg)
    block = cfg.get("diagnostics", {})
    # the tail beyond the last mode is empty, so keep K strictly below the count
    k_values = [k for k in block.get("k_values", [2, 4, 8, 16]) if k < eig.count]
    report = {"orthonormality_deviation": verify_orthonormality(eig),
              "eigenvalues": eig.eigenvalues.tolist(), "provenance": eig.provenance}
    if eig.domain.dimension == 1 and len(k_values) >= 2:
        truth = _truth(cfg.get("simulation", {}), eig)
        report["assumptions"] = assumption_diagnostics(
            eig, mc_draws=int(block.get("mc_draws", 10 ** 5)), truth=truth[:eig.count],
            k_values=k_values, seed=args.seed)
    return [write_json(args.out / "diagnostics.json", report)]


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "select": cmd_select,
            "table1": cmd_table1, "rate-study": cmd_rate_study,
            "frap-fit": cmd_frap_fit, "diagnostics": cmd_diagnostics}


# -- argument parsing ---------------------------------------------------------

def _global_flags(parser, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d(None), help="run configuration JSON")
    parser.add_argument("--seed", type=int, default=d(None), help="master seed (u64)")
    parser.add_argument("--out", type=Path, default=d(Path(".")), help="output directory")
    parser.add_argument("--threads", type=int, default=d(1), help="worker threads")
    parser.add_argument("--plot-data", action="store_true", default=d(False),
                        help="also write plot-ready CSV curves")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="physreg",
                                     description="Spectral spatio-temporal regression.")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("simulate", parents=[common], help="draw an observation set")
    p.add_argument("--n", type=int)
    p.add_argument("--sigma", type=float)
    p = sub.add_parser("fit", parents=[common], help="fit the spectral estimator")
    p.add_argument("--K", type=int, help="fixed cutoff (default: BIC selection)")
    p.add_argument("--n", type=int)
    p.add_argument("--sigma", type=float)
    p = sub.add_parser("select", parents=[common], help="BIC table over a cutoff range")
    p.add_argument("--n", type=int)
    p.add_argument("--sigma", type=float)
    for name in ("table1", "rate-study"):
        p = sub.add_parser(name, parents=[common], help="Monte Carlo study")
        p.add_argument("--reps", type=int)
    p = sub.add_parser("frap-fit", parents=[common], help="fit a frame stack")
    p.add_argument("--frames", help="binary frame file or CSV frame directory")
    p.add_argument("--cutoff", type=int, nargs=2, metavar=("K1", "K2"))
    p.add_argument("--k-range", type=int, nargs=2, metavar=("KMIN", "KMAX"))
    sub.add_parser("diagnostics", parents=[common], help="eigensystem and assumption checks")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = int(cfg.get("seed", DEFAULT_SEED))
        if not (0 <= args.seed < 2 ** 64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise ConfigError("threads must be at least 1")
        args.out.mkdir(parents=True, exist_ok=True)
        written = COMMANDS[args.command](cfg, args)
    except (NoFeasibleCutoff, DegenerateGCV, np.linalg.LinAlgError) as exc:
        print(f"physreg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"physreg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
