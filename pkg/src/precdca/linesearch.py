"""Non-monotone Armijo search and extrapolation rules.

The search tries ``lam = rho**(k-1) * lam_max`` for ``k = 1..N_max`` and
accepts the first trial with

    E(xbar + lam d) <= E(xbar) - eta * lam * ||d||^2 + nu_n,

where ``nu_n = omega * ||d||^2 / p(n)`` is a vanishing slack.  After the
search the extrapolation weight for the next anchor is either set from
the accepted step length (LSDE rule) or by the FISTA recursion used by
the baselines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Tuple

import numpy as np

from precdca.model import NanEnergyError

__all__ = ["LineSearchParams", "LsdeParams", "LineSearchResult",
           "ExtrapolationState", "nu_schedule", "nonmonotone_search",
           "lsde_update", "c_lambda", "fista_beta_step",
           "adaptive_restart_signal", "first_monotone_index", "PROFILES"]


def _p_linear(n):
    return n + 1.0


@dataclass(frozen=True)
class LineSearchParams:
    """Parameters of the non-monotone search.

    Attributes
    ----------
    lam_max : float
        First trial step.
    rho : float
        Backtracking factor in (0, 1).
    eta : float
        Sufficient decrease coefficient.
    omega : float
        Non-monotonicity budget; 0 gives a monotone Armijo search.
    n_max : int
        Number of trials.
    min_lambda : float
        Trials below this step length are not attempted.
    p_schedule : callable
        Denominator ``p(n)`` of the slack, default ``n + 1``.
    """

    lam_max: float = 2.0
    rho: float = 0.3
    eta: float = 2.9
    omega: float = 0.9
    n_max: int = 3
    min_lambda: float = 1e-8
    p_schedule: Callable[[int], float] = field(default=_p_linear,
                                               compare=False)

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if self.lam_max <= 0:
            raise ValueError("lam_max must be positive")
        if self.n_max < 1:
            raise ValueError("n_max must be at least 1")
        if self.eta <= 0 or self.omega < 0:
            raise ValueError("eta must be positive and omega nonnegative")


@dataclass(frozen=True)
class LsdeParams:
    """Constants of the line-search-determined extrapolation."""

    b1: float = 1e-3
    b2: float = 0.0

    def __post_init__(self):
        if self.b1 <= 0:
            raise ValueError("b1 must be positive")
        if not 0.0 <= self.b2 < 1.0:
            raise ValueError("b2 must lie in [0, 1)")


#: named parameter profiles: (search, extrapolation)
PROFILES = {
    "scad": (LineSearchParams(2.0, 0.3, 2.9, 0.9, 3), LsdeParams(1e-3, 0.0)),
    "gl": (LineSearchParams(2.0, 0.3, 0.3, 0.001, 3), LsdeParams(1e-3, 0.0)),
}


@dataclass(frozen=True)
class LineSearchResult:
    accepted: bool
    lam: float
    a: int
    nu: float
    E_trial: float
    trials: Tuple[float, ...] = ()


def nu_schedule(n, omega, d_norm_sq, p_schedule=_p_linear):
    """Slack ``omega * d_norm_sq / p(n)``."""
    if d_norm_sq == 0:
        return 0.0
    return omega * d_norm_sq / p_schedule(n)


def nonmonotone_search(phi, d_norm_sq, n, params, E_bar=None):
    """Backtracking search along a fixed direction.

    Parameters
    ----------
    phi : callable
        ``t -> E(xbar + t d)``.
    d_norm_sq : float
        ``||d||^2``; must be positive.
    n : int
        Outer iteration index (enters the slack).
    params : LineSearchParams
    E_bar : float, optional
        ``phi(0)`` if already known.

    Returns
    -------
    LineSearchResult
        On failure ``lam = 0`` and ``a = n_max + 1``; ``nu`` is reported
        as 0 in that case because the slack plays no role.

    Raises
    ------
    NanEnergyError
        If the energy is NaN at the anchor or a trial point.
    """
    if d_norm_sq <= 0:
        raise ValueError("search direction must be nonzero")
    if E_bar is None:
        E_bar = phi(0.0)
    if math.isnan(E_bar):
        raise NanEnergyError("energy is NaN at the anchor point")
    nu = nu_schedule(n, params.omega, d_norm_sq, params.p_schedule)
    trials = []
    lam = params.lam_max
    for k in range(1, params.n_max + 1):
        if lam < params.min_lambda:
            break
        E_t = phi(lam)
        if math.isnan(E_t):
            raise NanEnergyError(f"energy is NaN at trial step {lam!r}")
        trials.append(E_t)
        # difference form: the decrease term is not absorbed by E_bar
        if E_t - E_bar <= nu - params.eta * lam * d_norm_sq:
            return LineSearchResult(True, lam, k, nu, E_t, tuple(trials))
        lam *= params.rho
    return LineSearchResult(False, 0.0, params.n_max + 1, 0.0, E_bar,
                            tuple(trials))


def lsde_update(result, params):
    """Next extrapolation weight from a search outcome."""
    if result.accepted:
        return 1.0 / (1.0 + params.b1 + result.lam)
    return params.b2


def c_lambda(params, lam_max):
    """Lower bound on ``1/(1+lam_n)^2 - beta_{n+1}^2`` under LSDE."""
    b1, b2 = params.b1, params.b2
    c1 = b1 * (1 + b1) / ((1 + lam_max) ** 2 * (1 + b1 + lam_max) ** 2)
    c2 = (1 - b2 * b2) / 2
    return min(c1, c2)


def first_monotone_index(params):
    """First n with ``omega / p(n) < eta * lam_max * rho**n_max``.

    Past this index the slack is dominated by the sufficient decrease
    term, so accepted steps cannot increase the energy relative to the
    subproblem solution.
    """
    bound = params.eta * params.lam_max * params.rho ** params.n_max
    if params.omega == 0:
        return 0
    n = 0
    # p is increasing; a linear scan from a closed-form start is exact
    if params.p_schedule is _p_linear:
        n = max(0, int(math.floor(params.omega / bound)) - 2)
    while not params.omega / params.p_schedule(n) < bound:
        n += 1
    return n


@dataclass(frozen=True)
class ExtrapolationState:
    """Extrapolation weight for the current anchor.

    ``policy`` is one of ``"lsde"``, ``"zero"``, ``"fista"``,
    ``"fista_fixed"``, ``"fista_adaptive"`` and ``"fista_both"``.  For the
    FISTA policies ``theta_prev`` and ``theta`` hold the two most recent
    members of the recursion.
    """

    beta: float = 0.0
    theta_prev: float = 1.0
    theta: float = 1.0
    policy: str = "lsde"
    period: int = 200

    @property
    def fixed(self):
        return self.policy in ("fista_fixed", "fista_both")

    @property
    def adaptive(self):
        return self.policy in ("fista_adaptive", "fista_both")


def fista_beta_step(state, restart_signal=False, iteration=None):
    """Advance the FISTA recursion by one step.

    With ``iteration`` given and a fixed-restart policy, a restart is
    also triggered when ``iteration % period == 0``.  A restart sets both
    theta values to one and the next weight to zero.
    """
    restart = bool(restart_signal)
    if state.fixed and iteration is not None and iteration > 0 \
            and iteration % state.period == 0:
        restart = True
    if restart:
        return replace(state, beta=0.0, theta_prev=1.0, theta=1.0)
    theta_next = (1.0 + math.sqrt(1.0 + 4.0 * state.theta ** 2)) / 2.0
    beta = (state.theta - 1.0) / theta_next
    return replace(state, beta=beta, theta_prev=state.theta, theta=theta_next)


def adaptive_restart_signal(y_n, x_next, x_n):
    """``<y_n - x_next, x_next - x_n> > 0``."""
    y_n = np.asarray(y_n, float)
    x_next = np.asarray(x_next, float)
    x_n = np.asarray(x_n, float)
    return bool(np.dot(y_n - x_next, x_next - x_n) > 0)
