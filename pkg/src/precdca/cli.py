"""Command line harness.

::

    precdca run CONFIG.json [--out DIR] [--workers N] [--seed S]
    precdca rate-plot TRACE.csv [--out FILE]

``run`` solves every (algorithm, tolerance) cell of a benchmark config,
writes one trace CSV per cell and a JSON report.  Exit status: 0 on
success, 2 for an invalid config, 3 when any cell ended with NaN.

Config schema (version 1)::

    {
      "schema": 1,
      "name": "scad_l1",
      "problem": {"type": "scad" | "huber_scad" | "graph_gl", ...},
      "algorithms": ["npdcae_nls", "dca", ...],
      "profile": "scad" | "gl",
      "overrides": {"eta": 0.5, "b1": 0.01, ...},
      "termination": {"rule": "rel_change", "tolerances": [1e-4, 1e-6]},
      "max_iter": 10000,
      "restart_period": 200,
      "precond": {"kind": "jacobi", "sweeps": 5},
      "seed": 0,
      "rate_data": false
    }

SCAD problems take ``m, k, sparsity, noise`` (synthetic) or ``data``
(a LIBSVM file, labels as observations), plus ``mu, theta, alpha`` and
``split``.  GL problems take ``image``/``mask``/``truth`` PGM paths or a
``synthetic`` block, plus the :class:`~precdca.graphgl.GlParams` fields.
Relative paths are resolved against the config file.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from precdca import io as pio
from precdca.graphgl import (GlParams, build_gl_problem, build_weights, dice,
                             synthetic_two_phase)
from precdca.linesearch import LineSearchParams, LsdeParams, PROFILES
from precdca.model import ConfigurationError
from precdca.precond import Preconditioner
from precdca.scad import (LeastSquaresData, ScadParams, build_scad_problem,
                          synthetic_instance)
from precdca.solvers import (ALGORITHMS, NAN_ABORT, RULES, SolverConfig,
                             Termination, solve)

__all__ = ["main", "load_config", "build_problem", "run", "rate_plot",
           "CONFIG_SCHEMA", "configs_dir"]

CONFIG_SCHEMA = 1
EXIT_OK, EXIT_CONFIG, EXIT_NAN = 0, 2, 3

_SEARCH_KEYS = {f.name for f in fields(LineSearchParams)}
_LSDE_KEYS = {f.name for f in fields(LsdeParams)}
_TOP_KEYS = {"schema", "name", "problem", "algorithms", "profile",
             "overrides", "termination", "max_iter", "restart_period",
             "precond", "seed", "rate_data", "description"}


def configs_dir():
    """Directory of the shipped benchmark configs."""
    return Path(__file__).resolve().parent / "configs"


def _fail(msg):
    raise ConfigurationError(msg)


def load_config(path):
    """Read and validate a config file; returns ``(dict, base_dir)``."""
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        _fail(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        _fail(f"invalid JSON in {path}: {exc}")
    validate_config(cfg)
    return cfg, path.resolve().parent


def validate_config(cfg):
    if not isinstance(cfg, dict):
        _fail("config must be a JSON object")
    if cfg.get("schema") != CONFIG_SCHEMA:
        _fail(f"unsupported config schema {cfg.get('schema')!r}")
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        _fail(f"unknown config keys: {sorted(unknown)}")
    algs = cfg.get("algorithms")
    if not algs or not isinstance(algs, list):
        _fail("config needs a non-empty 'algorithms' list")
    for a in algs:
        if a not in ALGORITHMS:
            _fail(f"unknown algorithm {a!r}")
    if cfg.get("profile", "scad") not in PROFILES:
        _fail(f"unknown profile {cfg.get('profile')!r}")
    over = cfg.get("overrides", {})
    bad = set(over) - _SEARCH_KEYS - _LSDE_KEYS
    if bad:
        _fail(f"unknown overrides: {sorted(bad)}")
    term = cfg.get("termination")
    if not isinstance(term, dict):
        _fail("config needs a 'termination' block")
    if term.get("rule", "rel_change") not in RULES:
        _fail(f"unknown termination rule {term.get('rule')!r}")
    tols = term.get("tolerances")
    if not tols or not all(isinstance(t, (int, float)) and t > 0 for t in tols):
        _fail("termination needs a non-empty list of positive tolerances")
    prob = cfg.get("problem")
    if not isinstance(prob, dict) or prob.get("type") not in (
            "scad", "huber_scad", "graph_gl"):
        _fail("problem.type must be scad, huber_scad or graph_gl")
    if int(cfg.get("max_iter", 10000)) < 1:
        _fail("max_iter must be positive")


def _solver_params(cfg):
    search, lsde = PROFILES[cfg.get("profile", "scad")]
    over = cfg.get("overrides", {})
    try:
        search = replace(search, **{k: v for k, v in over.items()
                                    if k in _SEARCH_KEYS})
        lsde = replace(lsde, **{k: v for k, v in over.items()
                                if k in _LSDE_KEYS})
    except (TypeError, ValueError) as exc:
        _fail(f"invalid overrides: {exc}")
    return search, lsde


def _path(base, p):
    p = Path(p)
    q = p if p.is_absolute() else base / p
    if not q.exists():
        _fail(f"referenced file not found: {p}")
    return q


def build_problem(spec, base, seed):
    """Construct the problem of a config block.

    Returns ``(problem, truth, info)``; `truth` is the ground-truth mask
    for GL problems (else None) and `info` holds setup metadata.
    """
    kind = spec["type"]
    info = {"type": kind}
    if kind in ("scad", "huber_scad"):
        params = ScadParams(mu=spec.get("mu", 5e-4),
                            theta=spec.get("theta", 10.0),
                            alpha=spec.get("alpha"))
        if "data" in spec:
            ds = pio.load_libsvm(_path(base, spec["data"]))
            data = LeastSquaresData(ds.X, ds.labels, source=ds.source)
        else:
            try:
                data = synthetic_instance(int(spec["m"]), int(spec["k"]),
                                          int(spec["sparsity"]),
                                          float(spec.get("noise", 0.01)),
                                          seed=seed)
            except KeyError as exc:
                _fail(f"synthetic SCAD problem needs {exc.args[0]!r}")
        variant = "l1" if kind == "scad" else "huber"
        prob = build_scad_problem(data, params, variant=variant,
                                  split=spec.get("split", "standard"))
        info.update(source=data.source, shape=list(data.shape),
                    lam_max=data.lam_max)
        return prob, None, info

    gl_keys = {f.name for f in fields(GlParams)}
    gp = GlParams(**{k: v for k, v in spec.items() if k in gl_keys})
    if "image" in spec:
        img = pio.load_pgm(_path(base, spec["image"]).read_bytes())
        if "mask" not in spec:
            _fail("graph_gl with an image needs a 'mask'")
        prior = pio.load_mask(_path(base, spec["mask"]).read_bytes())
        truth = None
        if "truth" in spec:
            truth = pio.load_pgm(_path(base, spec["truth"]).read_bytes()) > 0.5
    else:
        syn = dict(spec.get("synthetic", {}))
        syn.setdefault("seed", seed)
        img, truth, prior = synthetic_two_phase(**syn)
    t0 = time.perf_counter()
    weights = build_weights(img, gp)
    info["weight_build_time"] = time.perf_counter() - t0
    info.update(shape=list(img.shape), kappa2=weights.kappa2,
                box=weights.box, edges=int(weights.W.nnz // 2))
    prob = build_gl_problem(weights, prior, gp)
    return prob, (None if truth is None else np.asarray(truth).ravel()), info


def _cell_name(alg, rule, tol):
    return f"{alg}_{rule}_{tol:g}"


def _run_cell(problem, truth, cfg, alg, tol, rate_data):
    search, lsde = _solver_params(cfg)
    term = cfg["termination"]
    rule = term.get("rule", "rel_change")
    termination = Termination(rule, float(tol),
                              truth=truth if rule == "dice_bound" else None)
    pc = cfg.get("precond")
    precond = Preconditioner(**pc) if pc else None
    sc = SolverConfig(algorithm=alg, search=search, lsde=lsde,
                      precond=precond, termination=termination,
                      max_iter=int(cfg.get("max_iter", 10000)),
                      restart_period=int(cfg.get("restart_period", 200)),
                      verbosity=1)
    rep = solve(problem, sc)
    if rate_data and rep.status != NAN_ABORT:
        # deterministic replay to record distances to the final iterate
        replay = solve(problem, sc, reference=rep.x)
        replay.wall_time = rep.wall_time
        rep = replay
    return rep


def run(config_path, out_dir=None, workers=1, seed=None, stream=sys.stdout):
    """Run a config; returns the process exit status."""
    try:
        cfg, base = load_config(config_path)
        seed = int(cfg.get("seed", 0) if seed is None else seed)
        problem, truth, info = build_problem(cfg["problem"], base, seed)
        if cfg["termination"].get("rule") == "dice_bound" and truth is None:
            _fail("dice_bound needs a ground truth")
        _solver_params(cfg)
        if cfg.get("precond"):
            Preconditioner(**cfg["precond"])
    except (ConfigurationError, pio.ParseError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    name = cfg.get("name") or Path(config_path).stem
    out = Path(out_dir or f"{name}_out")
    out.mkdir(parents=True, exist_ok=True)
    tols = [float(t) for t in cfg["termination"]["tolerances"]]
    rule = cfg["termination"].get("rule", "rel_change")
    cells = [(a, t) for a in cfg["algorithms"] for t in tols]
    rate_data = bool(cfg.get("rate_data", False))

    def task(cell):
        alg, tol = cell
        return _run_cell(problem, truth, cfg, alg, tol, rate_data)

    # warm shared caches before threads start
    problem.hess_fg1, problem.grad_f0, problem.grad_g10
    if problem.hess_f is not None and problem.prox_g1 is not None:
        problem.hess_f.largest_eigenvalue()
    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                reports = list(ex.map(task, cells))
        else:
            reports = [task(c) for c in cells]
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_cells = []
    any_nan = False
    for (alg, tol), rep in zip(cells, reports):
        cname = _cell_name(alg, rule, tol)
        rep.trace.meta.update(profile=cfg.get("profile", "scad"), seed=seed,
                              rule=rule, tol=tol, config=name)
        with open(out / f"{cname}.csv", "w", encoding="utf-8",
                  newline="") as fh:
            pio.write_trace(rep.trace, fh)
        extra = {"trace": f"{cname}.csv"}
        if truth is not None:
            extra["dice"] = dice(rep.x > 0, truth)
        if rate_data:
            with open(out / f"{cname}_rate.csv", "w", encoding="utf-8",
                      newline="") as fh:
                pio.write_rate_plot(rep.trace, fh)
            extra["rate"] = f"{cname}_rate.csv"
        out_cells.append(pio.report_cell(alg, tol, rep, rule=rule, **extra))
        any_nan |= rep.status == NAN_ABORT
        it = pio.MAX_ITER_SENTINEL if rep.status == "MAX_ITER" \
            else rep.iterations
        print(f"{alg:16s} {rule} {tol:8g}  iter {it!s:>7}  "
              f"{rep.status:18s} {rep.wall_time:8.3f}s", file=stream)
    meta = {"config": name, "seed": seed, "problem": info,
            "profile": cfg.get("profile", "scad"),
            "algorithms": cfg["algorithms"], "tolerances": tols,
            "rule": rule}
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        pio.write_report(out_cells, meta, fh)
    return EXIT_NAN if any_nan else EXIT_OK


def rate_plot(trace_path, out=None, stream=sys.stdout):
    """Emit ``(n, log10 dist, log10 gap)`` rows for a trace file."""
    try:
        with open(trace_path, "r", encoding="utf-8") as fh:
            trace = pio.read_trace(fh)
    except (OSError, pio.ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if trace.meta.get("status") not in ("CONVERGED", "STATIONARY_D_ZERO"):
        warnings.warn("trace did not converge; rows are flagged",
                      RuntimeWarning, stacklevel=2)
    if len(trace) and all(math.isnan(r.dist_ref) for r in trace.records):
        warnings.warn("trace has no distances to the final iterate; rerun "
                      "with rate_data enabled", RuntimeWarning, stacklevel=2)
    text = pio.write_rate_plot(trace)
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        stream.write(text)
    return EXIT_OK


def _parser():
    p = argparse.ArgumentParser(prog="precdca", description=__doc__.split(
        "\n\n")[0], formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="solve all cells of a benchmark config")
    r.add_argument("config")
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    q = sub.add_parser("rate-plot", help="convergence-rate rows of a trace")
    q.add_argument("trace")
    q.add_argument("--out", default=None, help="write CSV here, not stdout")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "run":
        if args.workers < 1:
            print("config error: --workers must be positive", file=sys.stderr)
            return EXIT_CONFIG
        cfg = args.config
        if not os.path.exists(cfg) and (configs_dir() / cfg).exists():
            cfg = str(configs_dir() / cfg)
        return run(cfg, args.out, args.workers, args.seed)
    return rate_plot(args.trace, args.out)


if __name__ == "__main__":
    sys.exit(main())
