"""Runtime checks of the convergence machinery.

The solver records, per iteration, the values needed here; the functions
below either evaluate the Lyapunov quantities directly or scan a trace
for violations of the properties the theory guarantees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from precdca.model import SparseSymOperator, evaluate_energy

__all__ = ["lyapunov_A", "lyapunov_H", "criticality_residual",
           "RateFit", "fit_local_rate", "lsde_gap_violations",
           "lyapunov_violations", "search_violations",
           "energy_increases", "summability_ratio", "DiagnosticError"]


class DiagnosticError(ValueError):
    """Inputs violate the assumptions of a diagnostic."""


def _weight_quad(M, v):
    if M is None:
        return float(np.dot(v, v))
    if isinstance(M, SparseSymOperator):
        return M.quad(v)
    if np.isscalar(M):
        return float(M) * float(np.dot(v, v))
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        return float(np.dot(M * v, v))
    return float(np.dot(M @ v, v))


def lyapunov_A(problem, x_next, xbar, x, M=None, scale=1.0):
    """``E(x_next) + scale/2 ||xbar - x||_M^2``.

    `M` may be a :class:`SparseSymOperator`, a dense matrix, a vector
    (diagonal) or a scalar; None means the identity.
    """
    v = np.asarray(xbar, float) - np.asarray(x, float)
    return evaluate_energy(problem, x_next) + 0.5 * scale * _weight_quad(M, v)


def lyapunov_H(problem, x_next, wbar, xbar, x, M=None, sigma=0.0, scale=1.0,
               probes=8, seed=0):
    """Perturbation energy for the nonsmooth-g1 regime.

    ``f(x+) + <x+, w> - g1*(w) - g2(x+) + sigma/2 ||x+ - xbar||^2 + scale/2
    ||xbar - x||_M^2`` with the conjugate evaluated through the Fenchel
    equality ``g1*(w) = <xbar, w> - g1(xbar)``.

    Raises
    ------
    DiagnosticError
        If `wbar` fails the subgradient inequality at `xbar` by more than
        1e-8 on `x_next` or on random probes.
    """
    x_next = np.asarray(x_next, float)
    xbar = np.asarray(xbar, float)
    wbar = np.asarray(wbar, float)
    g1_bar = problem.g1(xbar)
    rng = np.random.default_rng(seed)
    scale_pts = 1.0 + np.abs(xbar)
    zs = [x_next] + [xbar + scale_pts * rng.standard_normal(xbar.size)
                     for _ in range(probes)]
    for z in zs:
        gap = problem.g1(z) - g1_bar - float(np.dot(wbar, z - xbar))
        if gap < -1e-8:
            raise DiagnosticError("w is not a subgradient of g1 at xbar")
    conj = float(np.dot(xbar, wbar)) - g1_bar
    u = x_next - xbar
    v = xbar - np.asarray(x, float)
    return (problem.f(x_next) + float(np.dot(x_next, wbar)) - conj
            - problem.g2(x_next) + 0.5 * sigma * float(np.dot(u, u))
            + 0.5 * scale * _weight_quad(M, v))


def criticality_residual(problem, x):
    """Distance of zero to ``grad f + d g1 - grad g2`` at x.

    For ``g1 = w ||.||_1`` the minimal-norm element is formed
    coordinate-wise; otherwise E is assumed differentiable.
    """
    x = np.asarray(x, float)
    if problem.l1_weight is None:
        return float(np.linalg.norm(problem.grad_energy(x)))
    w = problem.l1_weight
    sgn = np.sign(x)
    smooth = (problem.grad_f(x) + problem.subgrad_g1(x) - w * sgn
              - problem.subgrad_g2(x))
    r = np.where(x != 0, smooth + w * sgn,
                 np.maximum(np.abs(smooth) - w, 0.0))
    return float(np.linalg.norm(r))


@dataclass(frozen=True)
class RateFit:
    eta: float
    r2: float
    regime: str
    points: int
    intercept: float = math.nan


def fit_local_rate(trace, x_final=None, min_points=30, drop_last=5):
    """Fit ``||x^n - x_final|| ~ c eta^n`` on the tail of a run.

    Parameters
    ----------
    trace : Trace or array_like
        A trace with a ``dist_ref`` column (distances of ``x^1, x^2, ...``
        to the final iterate), or the distances themselves.
    x_final : ignored when distances are given; kept for symmetry with
        the trace-producing API (the distances must be measured against
        the final iterate).

    Returns
    -------
    RateFit
        ``regime`` is ``LINEAR``, ``SUBLINEAR``, ``FINITE`` or ``NOFIT``.
    """
    if hasattr(trace, "column"):
        dist = trace.column("dist_ref")
    else:
        dist = np.asarray(trace, dtype=float)
    if np.any(np.isnan(dist)):
        raise DiagnosticError("trace lacks distances to the final iterate")
    N = dist.size
    if N >= 2 and dist[-2] == 0.0:
        return RateFit(0.0, 1.0, "FINITE", N)
    lo, hi = (2 * N) // 3, N - drop_last
    idx = np.arange(lo, max(lo, hi))
    if idx.size < min_points:
        return RateFit(math.nan, math.nan, "NOFIT", int(idx.size))
    d = dist[idx]
    if np.any(d <= 0):
        return RateFit(0.0, 1.0, "FINITE", int(idx.size))
    fit = stats.linregress(idx.astype(float), np.log(d))
    eta = float(np.exp(fit.slope))
    r2 = float(fit.rvalue ** 2)
    regime = "LINEAR" if 0.0 < eta < 1.0 and r2 >= 0.9 else "SUBLINEAR"
    return RateFit(eta, r2, regime, int(idx.size), float(fit.intercept))


def lsde_gap_violations(trace, c_lam):
    """Iterations where ``1/(1+lam)^2 - beta_next^2 <= c_lam``."""
    lam = trace.column("lam")
    bn = trace.column("beta_next")
    gap = 1.0 / (1.0 + lam) ** 2 - bn ** 2
    return np.flatnonzero(~(gap > c_lam))


def lyapunov_violations(trace, n0, c1, rel_slack=1e-12, abs_slack=1e-10):
    """Check A-descent past ``n0``.

    Returns two index arrays: iterations ``n > n0`` where
    ``A_n > A_{n-1}`` beyond the slack ``rel_slack * max(1, |A|)``, and
    iterations where ``A_{n-1} - A_n < c1 ||x^n - x^{n-1}||^2 - abs_slack``.
    Index n refers to the record of the transition ``x^n -> x^{n+1}``.
    """
    A = trace.column("A")
    step = trace.column("step_norm")
    inc, weak = [], []
    for n in range(max(n0, 0) + 1, A.size):
        slack = rel_slack * max(1.0, abs(A[n - 1]))
        if A[n] > A[n - 1] + slack:
            inc.append(n)
        # ||x^n - x^{n-1}|| is the step of record n-1
        if A[n - 1] - A[n] < c1 * step[n - 1] ** 2 - abs_slack:
            weak.append(n)
    return np.array(inc, dtype=int), np.array(weak, dtype=int)


def search_violations(trace, params):
    """Recheck recorded searches.

    Returns iterations where an accepted step fails the acceptance test
    as recorded, or where an earlier trial would already have passed.
    """
    bad = []
    lam_max, rho, eta = params.lam_max, params.rho, params.eta
    for r in trace.records:
        if not r.trials:
            continue
        dsq = r.d_norm ** 2
        ok = [E_t - r.E_bar <= r.nu - eta * lam_max * rho ** k * dsq
              for k, E_t in enumerate(r.trials)]
        if r.lam > 0:
            if not ok[r.a - 1] or any(ok[:r.a - 1]):
                bad.append(r.n)
        elif any(ok):
            bad.append(r.n)
    return np.array(bad, dtype=int)


def energy_increases(trace):
    """Iterations n with ``E(x^{n+1}) > E(x^n)``."""
    E = trace.energies()
    return np.flatnonzero(E[1:] > E[:-1])


def summability_ratio(trace, tail=0.2):
    """Share of ``sum ||x^{n+1} - x^n||^2`` coming from the last `tail`."""
    s = trace.column("step_norm") ** 2
    if s.size == 0 or s.sum() == 0:
        return 0.0
    k = int(math.ceil((1 - tail) * s.size))
    return float(s[k:].sum() / s.sum())
