"""Reproducible experiment runner.

Usage: ``fsde <subcommand> --config <path> [--seed N] [--out DIR] [-v]``

Subcommands: ``ml-eval``, ``solve``, ``picard``, ``separation``,
``lyapunov``, ``convergence``.  Everything nontrivial lives in the JSON
config; the flags only override the seed and output directory.  Every
artifact embeds the resolved config, the seed, the library version and the
kernel backend, and artifacts regenerate byte-identically from the same
config on the same library version.  Exit codes: 0 success, 2 config
error, 3 numerical blow-up/overflow, 4 statistical test failure.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from ._backend import get_backend
from .analysis import (
    WeightedNormConfig,
    contraction_diagnostic,
    gamma_threshold,
    kappa,
    lyapunov_experiment,
    separation_experiment,
)
from .exceptions import BlowUpError, FsdeError, FsdeValueError, MlOverflowError
from .models import InitialCondition, LinearFsde, builtin
from .solver import paths_to_csv, picard_solve, solve_em
from .specfun import mittag_leffler, mittag_leffler_log, ml_renewal_residual
from .stochastic import make_grid, sample_ensemble

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_STATISTICAL = 4

_FLOAT = "%.17g"


def _fail(msg):
    raise FsdeValueError(msg)


def _require(cfg, key, types, what):
    if key not in cfg:
        _fail("config is missing %r (%s)" % (key, what))
    val = cfg[key]
    if types is not None and not isinstance(val, types):
        _fail("config field %r has the wrong type (%s)" % (key, what))
    return val


def _build_model(cfg):
    spec = _require(cfg, "model", dict, "model spec")
    spec = dict(spec)
    name = spec.pop("model", None)
    if not isinstance(name, str):
        _fail('model spec needs a "model" name')
    return builtin(name, spec)


def _build_linear(cfg):
    spec = dict(_require(cfg, "model", dict, "model spec"))
    name = spec.pop("model", None)
    alpha = spec.get("alpha")
    if name == "scalar_linear":
        return LinearFsde.constant([[float(spec["a"])]], [[float(spec["s"])]], alpha)
    if name == "matrix_linear":
        return LinearFsde.constant(spec["A"], spec["B"], alpha)
    _fail("lyapunov requires a scalar_linear or matrix_linear model")


def _build_grid(cfg):
    g = _require(cfg, "grid", dict, "grid spec: {T, n_steps}")
    return make_grid(float(_require(g, "T", (int, float), "horizon")),
                     int(_require(g, "n_steps", int, "step count")))


def _build_mc(cfg):
    mc = _require(cfg, "mc", dict, "monte carlo spec: {n_paths, master_seed}")
    return (int(_require(mc, "n_paths", int, "path count")),
            int(_require(mc, "master_seed", int, "seed")))


def _build_ic(cfg, key="ic"):
    val = _require(cfg, key, (int, float, list), "initial condition")
    return InitialCondition.deterministic(val)


def _resolve_gamma(cfg, problem, T):
    analysis = cfg.get("analysis", {})
    gam = analysis.get("gamma", "auto")
    if gam == "auto":
        return 2.0 * gamma_threshold(problem.lipschitz, T, problem.alpha)
    gam = float(gam)
    if gam <= 0.0:
        _fail("analysis.gamma must be positive or 'auto'")
    return gam


def _canonical_config(cfg):
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def _artifact_header(cfg, backend):
    return (
        "# fsde v%s backend=%s\n# config %s\n"
        % (__version__, backend, _canonical_config(cfg))
    )


def _write_csv(path, cfg, backend, columns, rows):
    with open(path, "w") as fh:
        fh.write(_artifact_header(cfg, backend))
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(
                c if isinstance(c, str) else _FLOAT % c for c in row
            ) + "\n")


def _write_report(path, cfg, backend, report_dict):
    with open(path, "w") as fh:
        json.dump(
            {"version": __version__, "backend": backend,
             "config": cfg, "report": report_dict},
            fh, sort_keys=True, indent=2,
        )
        fh.write("\n")


def _log(verbose, msg):
    if verbose:
        sys.stderr.write("fsde: %s\n" % msg)


# ---------------------------------------------------------------------------
# subcommands

def _cmd_ml_eval(cfg, out_dir, verbose):
    ml = _require(cfg, "ml", dict, "ml spec: {alpha, gamma, t_values}")
    alpha = float(_require(ml, "alpha", (int, float), "order"))
    if not (0.5 < alpha < 1.0):
        _fail("ml.alpha must lie in (1/2, 1)")
    gam = float(_require(ml, "gamma", (int, float), "weight coefficient"))
    ts = _require(ml, "t_values", list, "evaluation nodes")
    if not ts or any(not isinstance(t, (int, float)) or t < 0 for t in ts):
        _fail("ml.t_values must be a nonempty list of nonnegative reals")
    tol = float(ml.get("residual_tolerance", 1e-6))
    beta = 2.0 * alpha - 1.0
    backend = get_backend().BACKEND_NAME
    rows, worst = [], 0.0
    for t in ts:
        z = gam * float(t) ** beta
        logv = mittag_leffler_log(beta, z)
        try:
            val = _FLOAT % mittag_leffler(beta, z)
        except MlOverflowError:
            val = "overflow"
        res = ml_renewal_residual(alpha, gam, float(t))
        worst = max(worst, res)
        rows.append((float(t), val, logv, res))
    _write_csv(os.path.join(out_dir, "ml_eval.csv"), cfg, backend,
               ("t", "ml_value", "log_ml_value", "renewal_residual"), rows)
    _write_report(os.path.join(out_dir, "ml_eval.json"), cfg, backend,
                  {"max_residual": worst, "tolerance": tol,
                   "passed": worst <= tol})
    _log(verbose, "ml-eval max residual %.3g (tol %.3g)" % (worst, tol))
    print("ml-eval: %s (max renewal residual %.3g)"
          % ("PASS" if worst <= tol else "FAIL", worst))
    return EXIT_OK if worst <= tol else EXIT_STATISTICAL


def _cmd_solve(cfg, out_dir, verbose):
    problem = _build_model(cfg)
    grid = _build_grid(cfg)
    n_paths, seed = _build_mc(cfg)
    ic = _build_ic(cfg)
    scheme = cfg.get("scheme", "left")
    backend = get_backend().BACKEND_NAME
    _log(verbose, "sampling %d paths on [0, %g] with %d steps"
         % (n_paths, grid.horizon, grid.n_steps))
    noise = sample_ensemble(grid, n_paths, seed)
    ens = solve_em(problem, ic, noise, scheme=scheme)
    sq = np.einsum("kjd,kjd->kj", ens.states, ens.states)
    m = sq.mean(axis=1)
    if n_paths > 1:
        se_m = sq.std(axis=1, ddof=1) / math.sqrt(n_paths)
    else:
        se_m = np.zeros_like(m)
    ms = np.sqrt(m)
    se = np.where(ms > 0, se_m / np.maximum(2 * ms, 1e-300), 0.0)
    _write_csv(os.path.join(out_dir, "msnorm.csv"), cfg, backend,
               ("t", "ms_norm", "stderr"),
               zip(grid.nodes, ms, se))
    if cfg.get("write_paths", False):
        paths_to_csv(ens, os.path.join(out_dir, "paths.csv"))
    print("solve: OK (final ms norm %.6g)" % ms[-1])
    return EXIT_OK


def _cmd_picard(cfg, out_dir, verbose):
    problem = _build_model(cfg)
    grid = _build_grid(cfg)
    n_paths, seed = _build_mc(cfg)
    ic = _build_ic(cfg)
    tol = float(cfg.get("tol", 0.0))
    max_iter = int(cfg.get("max_iter", 8))
    gam = _resolve_gamma(cfg, problem, grid.horizon)
    backend = get_backend().BACKEND_NAME
    config = WeightedNormConfig(horizon=grid.horizon, gamma_coef=gam,
                                alpha=problem.alpha, grid=grid)
    noise = sample_ensemble(grid, n_paths, seed)
    warnings = []
    hist = picard_solve(problem, ic, noise, config, tol=tol,
                        max_iter=max_iter, warn=warnings.append)
    for w in warnings:
        _log(verbose, "warning: %s" % w)
    kap = kappa(problem.lipschitz, grid.horizon, problem.alpha, gam)
    rep = contraction_diagnostic(hist, kap)
    rows = []
    for i, (d, se) in enumerate(zip(hist.distances, hist.stderrs)):
        ratio = rep.ratios[i - 1] if 1 <= i <= len(rep.ratios) else ""
        rse = rep.ratio_stderrs[i - 1] if 1 <= i <= len(rep.ratios) else ""
        rows.append((float(i), d, se, ratio if ratio == "" else float(ratio),
                     rse if rse == "" else float(rse)))
    _write_csv(os.path.join(out_dir, "picard.csv"), cfg, backend,
               ("iteration", "distance", "stderr", "ratio", "ratio_stderr"),
               rows)
    body = rep.to_dict()
    body.update({"gamma": gam, "converged": hist.converged,
                 "n_iterations": len(hist.distances)})
    _write_report(os.path.join(out_dir, "picard.json"), cfg, backend, body)
    print("picard: %s (kappa %.6f, %d ratios, %d exceeding)"
          % ("PASS" if rep.passed else "FAIL", kap, len(rep.ratios),
             rep.n_exceeding))
    return EXIT_OK if rep.passed else EXIT_STATISTICAL


def _cmd_separation(cfg, out_dir, verbose):
    problem = _build_model(cfg)
    grid = _build_grid(cfg)
    n_paths, seed = _build_mc(cfg)
    eta = _build_ic(cfg, "ic")
    zeta = _build_ic(cfg, "ic2")
    analysis = cfg.get("analysis", {})
    eps = float(analysis.get("epsilon", 0.05))
    tail = float(analysis.get("tail_fraction", 0.5))
    margin = float(analysis.get("slope_margin", 0.05))
    backend = get_backend().BACKEND_NAME
    _log(verbose, "coupled separation run: %d paths, %d steps"
         % (n_paths, grid.n_steps))
    noise = sample_ensemble(grid, n_paths, seed)
    rep = separation_experiment(problem, (eta, zeta), noise, epsilon=eps,
                                tail_fraction=tail, slope_margin=margin)
    _write_csv(os.path.join(out_dir, "separation.csv"), cfg, backend,
               ("t", "distance", "stderr"),
               zip(rep.times, rep.distances, rep.stderrs))
    _write_report(os.path.join(out_dir, "separation.json"), cfg, backend,
                  rep.to_dict())
    print("separation: %s (slope %.4f vs floor %.4f - %.2g)"
          % ("PASS" if rep.passed else "FAIL", rep.slope, rep.floor, margin))
    return EXIT_OK if rep.passed else EXIT_STATISTICAL


def _cmd_lyapunov(cfg, out_dir, verbose):
    linear = _build_linear(cfg)
    grid = _build_grid(cfg)
    n_paths, seed = _build_mc(cfg)
    ic = _build_ic(cfg)
    analysis = cfg.get("analysis", {})
    tail = float(analysis.get("tail_fraction", 0.5))
    tol = float(analysis.get("tolerance", 0.05))
    backend = get_backend().BACKEND_NAME
    noise = sample_ensemble(grid, n_paths, seed)
    rep = lyapunov_experiment(linear, ic, noise, tail_fraction=tail,
                              tolerance=tol)
    _write_csv(os.path.join(out_dir, "lyapunov.csv"), cfg, backend,
               ("t", "ms_norm", "stderr"),
               zip(rep.times, rep.ms_norms, rep.ms_stderrs))
    _write_report(os.path.join(out_dir, "lyapunov.json"), cfg, backend,
                  rep.to_dict())
    print("lyapunov: %s (lambda_hat %.4f, tolerance -%g)"
          % ("PASS" if rep.passed else "FAIL", rep.lambda_hat, tol))
    return EXIT_OK if rep.passed else EXIT_STATISTICAL


def _cmd_convergence(cfg, out_dir, verbose):
    problem = _build_model(cfg)
    spec = cfg["model"]
    if spec.get("model") != "scalar_linear" or float(spec.get("s", 1.0)) != 0.0:
        _fail("convergence requires scalar_linear with s = 0 (deterministic "
              "reduction with a Mittag-Leffler oracle)")
    a = float(spec["a"])
    alpha = problem.alpha
    g0 = _require(cfg, "grid", dict, "grid spec")
    T = float(_require(g0, "T", (int, float), "horizon"))
    steps = _require(cfg, "n_steps_list", list, "refinement ladder")
    if len(steps) < 2 or any(not isinstance(n, int) or n < 1 for n in steps):
        _fail("n_steps_list must hold at least two positive integers")
    if sorted(steps) != steps:
        _fail("n_steps_list must be ascending")
    ratio_bound = float(cfg.get("ratio_bound", 0.75))
    ic = _build_ic(cfg)
    eta = float(ic.vector[0])
    backend = get_backend().BACKEND_NAME
    rows, errs = [], []
    for n in steps:
        grid = make_grid(T, n)
        noise = sample_ensemble(grid, 1, 0)
        ens = solve_em(problem, ic, noise)
        ref = np.array(
            [eta * mittag_leffler(alpha, a * t ** alpha) for t in grid.nodes]
        )
        err = float(np.abs(ens.states[:, 0, 0] - ref).max())
        errs.append(err)
        rows.append((T / n, float(n), err,
                     errs[-1] / errs[-2] if len(errs) > 1 else ""))
        _log(verbose, "n=%d sup error %.3e" % (n, err))
    ratios = [b / a_ for a_, b in zip(errs, errs[1:])]
    ok = all(r <= ratio_bound for r in ratios)
    _write_csv(os.path.join(out_dir, "convergence.csv"), cfg, backend,
               ("h", "n_steps", "sup_error", "ratio"), rows)
    _write_report(os.path.join(out_dir, "convergence.json"), cfg, backend,
                  {"sup_errors": errs, "ratios": ratios,
                   "ratio_bound": ratio_bound, "passed": ok})
    print("convergence: %s (ratios %s)"
          % ("PASS" if ok else "FAIL",
             ", ".join("%.3f" % r for r in ratios)))
    return EXIT_OK if ok else EXIT_STATISTICAL


_COMMANDS = {
    "ml-eval": _cmd_ml_eval,
    "solve": _cmd_solve,
    "picard": _cmd_picard,
    "separation": _cmd_separation,
    "lyapunov": _cmd_lyapunov,
    "convergence": _cmd_convergence,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="fsde",
        description="Caputo fractional SDE experiment runner",
    )
    parser.add_argument("subcommand", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config path")
    parser.add_argument("--seed", type=int, default=None,
                        help="override mc.master_seed")
    parser.add_argument("--out", default=None, help="override output_dir")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)

    try:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            _fail("cannot read config %s: %s" % (args.config, exc))
        if not isinstance(cfg, dict):
            _fail("config root must be a JSON object")
        if args.seed is not None:
            cfg.setdefault("mc", {})
            cfg["mc"]["master_seed"] = args.seed
        out_dir = args.out or cfg.get("output_dir") or "."
        cfg["output_dir"] = out_dir
        os.makedirs(out_dir, exist_ok=True)
        return _COMMANDS[args.subcommand](cfg, out_dir, args.verbose)
    except (FsdeValueError,) as exc:
        sys.stderr.write("fsde: config error: %s\n" % exc)
        return EXIT_CONFIG
    except (BlowUpError, MlOverflowError) as exc:
        sys.stderr.write("fsde: numerical failure: %s\n" % exc)
        return EXIT_NUMERICAL
    except FsdeError as exc:  # residual library errors are config-level
        sys.stderr.write("fsde: error: %s\n" % exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
