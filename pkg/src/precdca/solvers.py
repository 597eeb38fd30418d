"""Outer iterations for the DC solvers.

All algorithms share one loop::

    xi    = subgradient of g2 at x
    y     = x + beta (x - x_prev)
    xbar  = subproblem solution at anchor y
    d     = xbar - x                      (stop if exactly zero)
    lam   = line search along d from xbar (or 0 without search)
    x+    = xbar + lam d
    beta  = next extrapolation weight

and differ in the subproblem (``implicit`` keeps f inside, ``linearized``
uses its tangent), the extrapolation rule and the search.

==================  ==========  ===================  ============
algorithm           scheme      extrapolation        search
==================  ==========  ===================  ============
npdcae_nls          implicit    lsde                 non-monotone
pdcae_nls           linearized  lsde                 non-monotone
dca                 implicit    none                 none
bdca_ls             implicit    none                 monotone
pdca                linearized  none                 none
pdca_nls            linearized  none                 non-monotone
pdcae               linearized  fista, both restarts none
pdcae_fixed         linearized  fista, fixed restart none
pdcae_adaptive      linearized  fista, adaptive      none
pdcae_norestart     linearized  fista                none
npdcae              implicit    fista, both restarts none
==================  ==========  ===================  ============
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from precdca.linesearch import (ExtrapolationState, LineSearchParams,
                                LsdeParams, PROFILES, adaptive_restart_signal,
                                c_lambda, first_monotone_index,
                                fista_beta_step, lsde_update,
                                nonmonotone_search)
from precdca.model import ConfigurationError, NanEnergyError, evaluate_energy
from precdca.precond import Preconditioner, make_subproblem

__all__ = ["ALGORITHMS", "Termination", "SolverConfig", "IterateState",
           "IterationRecord", "Trace", "SolveReport", "solve",
           "solve_npdcae_nls", "solve_pdcae_nls", "solve_baseline",
           "check_termination", "default_preconditioner",
           "CONVERGED", "MAX_ITER", "STATIONARY_D_ZERO", "NAN_ABORT"]

CONVERGED = "CONVERGED"
MAX_ITER = "MAX_ITER"
STATIONARY_D_ZERO = "STATIONARY_D_ZERO"
NAN_ABORT = "NAN_ABORT"

ALGORITHMS = {
    "npdcae_nls": ("implicit", "lsde", "nonmonotone"),
    "pdcae_nls": ("linearized", "lsde", "nonmonotone"),
    "dca": ("implicit", "zero", None),
    "bdca_ls": ("implicit", "zero", "monotone"),
    "pdca": ("linearized", "zero", None),
    "pdca_nls": ("linearized", "zero", "nonmonotone"),
    "pdcae": ("linearized", "fista_both", None),
    "pdcae_fixed": ("linearized", "fista_fixed", None),
    "pdcae_adaptive": ("linearized", "fista_adaptive", None),
    "pdcae_norestart": ("linearized", "fista", None),
    "npdcae": ("implicit", "fista_both", None),
}

RULES = ("rel_change", "step_norm", "grad_norm", "dice_bound")


@dataclass(frozen=True, eq=False)
class Termination:
    """Stopping rule.

    ``rel_change``: ``||x+ - x|| / max(1, ||x+||) < tol``;
    ``step_norm``: ``||x+ - x|| < tol``; ``grad_norm``: ``||grad E(x+)|| <
    tol``; ``dice_bound``: DICE of ``x+ > 0`` against `truth` is at least
    `tol`.
    """

    rule: str = "rel_change"
    tol: float = 1e-6
    truth: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.rule not in RULES:
            raise ConfigurationError(f"unknown termination rule {self.rule!r}")
        if not self.tol > 0:
            raise ConfigurationError("termination tolerance must be positive")
        if self.rule == "dice_bound" and self.truth is None:
            raise ConfigurationError("dice_bound needs a ground-truth mask")


@dataclass(frozen=True, eq=False)
class SolverConfig:
    """Tunables of one run.

    Attributes
    ----------
    algorithm : str
        Key of :data:`ALGORITHMS`.
    search, lsde : LineSearchParams, LsdeParams
    precond : Preconditioner, optional
        Default depends on the problem, see :func:`default_preconditioner`.
    termination : Termination
    max_iter : int
    restart_period : int
        Period of the fixed FISTA restart.
    L : float, optional
        Curvature of the linearized scheme; default ``problem.L``.
    verbosity : int
        0 records energies and steps, 1 adds Lyapunov values, 2 adds the
        criticality residual at every iteration.
    """

    algorithm: str = "npdcae_nls"
    search: LineSearchParams = field(default_factory=lambda: PROFILES["scad"][0])
    lsde: LsdeParams = field(default_factory=lambda: PROFILES["scad"][1])
    precond: Optional[Preconditioner] = None
    termination: Termination = field(default_factory=Termination)
    max_iter: int = 10000
    restart_period: int = 200
    L: Optional[float] = None
    verbosity: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be at least 1")
        if self.restart_period < 1:
            raise ConfigurationError("restart_period must be at least 1")

    @classmethod
    def from_profile(cls, profile, **kw):
        search, lsde = PROFILES[profile]
        return cls(search=search, lsde=lsde, **kw)


@dataclass
class IterateState:
    """Working set of one outer iteration."""

    x: np.ndarray
    x_prev: np.ndarray
    y: Optional[np.ndarray] = None
    xbar: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None
    xi: Optional[np.ndarray] = None
    lam: float = 0.0
    beta: float = 0.0
    a: int = 0

    @property
    def delta(self):
        return 1 if self.lam > 0 else 0


#: trace columns in file order
COLUMNS = ("n", "E", "A", "H", "d_norm", "lam", "beta", "a", "crit_residual",
           "nu", "wall", "E_bar", "beta_next", "step_norm", "x_norm",
           "wdist_sq", "dist_ref", "dice", "inner_iters", "trials")


@dataclass
class IterationRecord:
    n: int
    E: float
    A: float = math.nan
    H: float = math.nan
    d_norm: float = math.nan
    lam: float = 0.0
    beta: float = 0.0
    a: int = 0
    crit_residual: float = math.nan
    nu: float = 0.0
    wall: float = 0.0
    E_bar: float = math.nan
    beta_next: float = 0.0
    step_norm: float = math.nan
    x_norm: float = math.nan
    wdist_sq: float = math.nan
    dist_ref: float = math.nan
    dice: float = math.nan
    inner_iters: int = 0
    trials: tuple = ()


@dataclass
class Trace:
    """Per-iteration records plus run metadata.

    ``records[n]`` describes the transition from ``x^n`` to ``x^{n+1}``;
    ``meta["E0"]`` holds the initial energy.
    """

    records: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        if name == "trials":
            return [r.trials for r in self.records]
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def energies(self):
        """``E(x^0), E(x^1), ...``."""
        return np.concatenate([[self.meta.get("E0", math.nan)],
                               self.column("E")])


@dataclass
class SolveReport:
    x: np.ndarray
    iterations: int
    status: str
    wall_time: float
    trace: Trace
    n0: int = 0
    mu_min: float = 0.0
    c_lambda: float = 0.0
    c1: float = 0.0
    crit_residual: float = math.nan
    grad_f0_norm: float = math.nan
    nan_iteration: Optional[int] = None
    message: str = ""

    @property
    def converged(self):
        return self.status == CONVERGED


def default_preconditioner(problem, scheme):
    """Closed-form path when available, Jacobi sweeps otherwise."""
    if scheme == "implicit":
        if problem.hess_f is not None and problem.prox_g1 is not None:
            return Preconditioner("spectral_gap")
        if problem.fg1_quadratic:
            return Preconditioner("jacobi")
        if problem.grad_g1_conj is not None and problem.meta.get("f_zero"):
            return Preconditioner("none")
    else:
        if problem.prox_g1 is not None:
            return Preconditioner("identity")
        if problem.hess_g1 is not None:
            return Preconditioner("jacobi")
    raise ConfigurationError(
        f"no subproblem solver available for {problem.name or 'problem'} "
        f"under the {scheme} scheme")


def _crit(problem, x):
    from precdca.diagnostics import criticality_residual
    return criticality_residual(problem, x)


def check_termination(rule, state, problem):
    """Apply a :class:`Termination` rule to ``state.x`` (new) and
    ``state.x_prev`` (previous iterate)."""
    if rule.rule in ("rel_change", "step_norm"):
        step = float(np.linalg.norm(state.x - state.x_prev))
        if rule.rule == "step_norm":
            return step < rule.tol
        return step / max(1.0, float(np.linalg.norm(state.x))) < rule.tol
    if rule.rule == "grad_norm":
        if not problem.smooth:
            raise ConfigurationError("grad_norm needs a differentiable energy")
        return float(np.linalg.norm(problem.grad_energy(state.x))) < rule.tol
    from precdca.graphgl import dice
    truth = np.asarray(rule.truth, dtype=bool).ravel()
    return dice(np.asarray(state.x) > 0, truth) >= rule.tol


def solve(problem, config, x0=None, reference=None, callback=None):
    """Run ``config.algorithm`` on `problem` from `x0` (default zeros).

    Parameters
    ----------
    reference : ndarray, optional
        If given, ``||x^{n+1} - reference||`` is recorded in ``dist_ref``.
    callback : callable, optional
        Called as ``callback(n, x_next)`` after every accepted iterate;
        `x_next` must not be modified.

    Returns
    -------
    SolveReport
    """
    scheme, policy, search = ALGORITHMS[config.algorithm]
    term = config.termination
    if term.rule == "grad_norm" and not problem.smooth:
        raise ConfigurationError("grad_norm needs a differentiable energy")
    precond = config.precond or default_preconditioner(problem, scheme)
    sub = make_subproblem(problem, scheme, precond, config.L)

    params = config.search
    if search == "monotone":
        params = replace(params, omega=0.0)
    n0 = first_monotone_index(params) if search else 0
    c_lam = c_lambda(config.lsde, params.lam_max)
    track_H = (config.verbosity >= 1 and not problem.g1_smooth
               and problem.sigma is not None)
    sigma = problem.sigma or 0.0
    truth = None if term.truth is None else \
        np.asarray(term.truth, dtype=bool).ravel()
    if truth is not None:
        from precdca.graphgl import dice

    x = np.zeros(problem.dim) if x0 is None else np.array(x0, dtype=float)
    if x.shape != (problem.dim,):
        raise ValueError("x0 has the wrong dimension")
    x_prev = x.copy()
    E_x = evaluate_energy(problem, x)
    grad_f0_norm = float(np.linalg.norm(problem.grad_f(x)))
    trace = Trace(meta={"E0": E_x, "algorithm": config.algorithm,
                        "scheme": scheme, "policy": policy,
                        "search": search or "none", "precond": precond.kind,
                        "n0": n0, "problem": problem.name})
    ext = ExtrapolationState(policy=policy, period=config.restart_period)
    beta = 0.0
    lam_prev = 0.0
    z_prev = None
    status = MAX_ITER
    nan_at = None
    message = ""
    iterations = 0
    t_start = time.perf_counter()

    for n in range(config.max_iter):
        xi = np.asarray(problem.subgrad_g2(x), dtype=float)
        y = x + beta * (x - x_prev) if beta != 0.0 else x
        res = sub.step(y, xi)
        xbar = res.xbar
        d = xbar - x
        dsq = float(np.dot(d, d))
        if dsq == 0.0:
            status = STATIONARY_D_ZERO
            break
        phi = problem.restrict(xbar, d)
        E_bar = phi(0.0)
        if math.isnan(E_bar):
            status, nan_at = NAN_ABORT, n
            message = f"energy is NaN at the subproblem solution, iteration {n}"
            break
        trials = ()
        nu = 0.0
        a = 0
        lam = 0.0
        E_next = E_bar
        accepted = False
        if search:
            try:
                ls = nonmonotone_search(phi, dsq, n, params, E_bar)
            except NanEnergyError as exc:
                status, nan_at = NAN_ABORT, n
                message = f"{exc} (iteration {n})"
                break
            trials, nu, a, accepted = ls.trials, ls.nu, ls.a, ls.accepted
            if accepted:
                lam, E_next = ls.lam, ls.E_trial
        x_next = xbar + lam * d if lam > 0 else xbar

        rec = IterationRecord(n=n, E=E_next, E_bar=E_bar, lam=lam, beta=beta,
                              a=a, nu=nu, d_norm=math.sqrt(dsq),
                              trials=trials, inner_iters=res.inner_iters)
        if config.verbosity >= 1:
            if sub.implicit_weight:
                z = res.residual if z_prev is None or beta == 0.0 \
                    else res.residual + (beta * (1.0 + lam_prev)) * z_prev
                wdist = float(np.dot(z, d)) - sub.A_imp.quad(d)
                z_prev = z
            else:
                wdist = sub.weight_norm_sq(d)
            rec.wdist_sq = wdist
            rec.A = E_next + 0.5 * wdist
            if track_H:
                wbar = problem.subgrad_g1(xbar, query=x_next)
                u = x_next - xbar
                rec.H = (problem.f(x_next) + float(np.dot(u, wbar))
                         + problem.g1(xbar) - problem.g2(x_next)
                         + 0.5 * sigma * float(np.dot(u, u)) + 0.5 * wdist)

        if policy == "lsde":
            beta_next = lsde_update(ls, config.lsde) if search else 0.0
        elif policy == "zero":
            beta_next = 0.0
        else:
            restart = ext.adaptive and adaptive_restart_signal(y, x_next, x)
            ext = fista_beta_step(ext, restart, iteration=n + 1)
            beta_next = ext.beta
        rec.beta_next = beta_next

        step = float(np.linalg.norm(x_next - x))
        rec.step_norm = step
        rec.x_norm = float(np.linalg.norm(x_next))
        if reference is not None:
            rec.dist_ref = float(np.linalg.norm(x_next - reference))
        if config.verbosity >= 2:
            rec.crit_residual = _crit(problem, x_next)
        done = False
        if term.rule == "step_norm":
            done = step < term.tol
        elif term.rule == "rel_change":
            done = step / max(1.0, rec.x_norm) < term.tol
        elif term.rule == "grad_norm":
            g = float(np.linalg.norm(problem.grad_energy(x_next)))
            rec.crit_residual = g
            done = g < term.tol
        else:
            rec.dice = dice(x_next > 0, truth)
            done = rec.dice >= term.tol
        rec.wall = time.perf_counter() - t_start
        trace.records.append(rec)
        if callback is not None:
            callback(n, x_next)

        x_prev, x = x, x_next
        beta = beta_next
        lam_prev = lam
        iterations = n + 1
        if math.isnan(E_next):
            status, nan_at = NAN_ABORT, n
            message = f"energy is NaN at iteration {n}"
            break
        if done:
            status = CONVERGED
            break

    wall = time.perf_counter() - t_start
    crit = _crit(problem, x) if status != NAN_ABORT else math.nan
    c1 = c_lam * sub.mu_min / 2.0
    trace.meta.update(status=status, iterations=iterations, c_lambda=c_lam,
                      mu_min=sub.mu_min, c1=c1)
    return SolveReport(x=x, iterations=iterations, status=status,
                       wall_time=wall, trace=trace, n0=n0,
                       mu_min=sub.mu_min, c_lambda=c_lam,
                       c1=c1, crit_residual=crit,
                       grad_f0_norm=grad_f0_norm, nan_iteration=nan_at,
                       message=message)


def solve_npdcae_nls(problem, config, x0=None, **kw):
    """Implicit subproblem, non-monotone search and LSDE extrapolation."""
    return solve(problem, replace(config, algorithm="npdcae_nls"), x0, **kw)


def solve_pdcae_nls(problem, config, x0=None, **kw):
    """Linearized subproblem, non-monotone search and LSDE extrapolation."""
    return solve(problem, replace(config, algorithm="pdcae_nls"), x0, **kw)


def solve_baseline(problem, config, x0=None, **kw):
    """Run one of the comparison methods named in ``config.algorithm``."""
    if config.algorithm in ("npdcae_nls", "pdcae_nls"):
        raise ConfigurationError(f"{config.algorithm} is not a baseline")
    return solve(problem, config, x0, **kw)
