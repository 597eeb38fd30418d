import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import double_well_1d, soft_threshold_1d
from precdca.graphgl import (GlParams, build_gl_problem, build_weights,
                             synthetic_two_phase)
from precdca.linesearch import LineSearchParams
from precdca.model import ConfigurationError, DcProblem, SparseSymOperator
from precdca.precond import Preconditioner
from precdca.solvers import (ALGORITHMS, CONVERGED, MAX_ITER, NAN_ABORT,
                             STATIONARY_D_ZERO, IterateState, SolverConfig,
                             Termination, check_termination,
                             default_preconditioner, solve, solve_baseline,
                             solve_npdcae_nls, solve_pdcae_nls)


def _cfg(alg="npdcae_nls", rule="step_norm", tol=1e-12, **kw):
    return SolverConfig(algorithm=alg, termination=Termination(rule, tol), **kw)


def _dca_soft_threshold(mu=0.5, lam=2.0):
    """``1/2 (x - 1)^2 + mu |x|`` split with f = 0 so DCA steps are explicit."""
    def prox(v, t):
        return np.sign(v) * np.maximum(np.abs(v) - mu * t, 0.0)

    return DcProblem(
        dim=1, g1=lambda x: mu * abs(x[0]) + 0.5 * lam * x[0] ** 2,
        subgrad_g1=lambda x, query=None: mu * np.sign(x) + lam * x,
        g2=lambda x: 0.5 * lam * x[0] ** 2 - 0.5 * (x[0] - 1.0) ** 2,
        subgrad_g2=lambda x: lam * x - (x - 1.0),
        grad_g1_conj=lambda v: prox(v / lam, 1.0 / lam), mu=lam,
        meta={"f_zero": True}, l1_weight=mu, sigma=1.0)


@pytest.mark.parametrize("alg", sorted(a for a in ALGORITHMS
                                       if a not in ("dca", "bdca_ls")))
def test_soft_threshold_converges(alg):
    rep = solve(soft_threshold_1d(), _cfg(alg))
    assert rep.status in (CONVERGED, STATIONARY_D_ZERO)
    assert abs(rep.x[0] - 0.5) <= 1e-8


@pytest.mark.parametrize("alg", ["dca", "bdca_ls"])
def test_dca_fixed_point_and_cost(alg):
    prob = _dca_soft_threshold()
    rep = solve(prob, _cfg(alg, "rel_change", 1e-8))
    ref = solve(soft_threshold_1d(), _cfg("npdcae_nls", "rel_change", 1e-8))
    assert abs(rep.x[0] - 0.5) <= 1e-8
    assert abs(ref.x[0] - 0.5) <= 1e-8
    if alg == "dca":
        assert rep.iterations > ref.iterations


def test_stationary_start():
    prob = soft_threshold_1d(center=0.25)
    rep = solve(prob, _cfg())
    assert rep.status == STATIONARY_D_ZERO and rep.iterations == 0
    assert len(rep.trace) == 0
    np.testing.assert_array_equal(rep.x, [0.0])


@pytest.mark.parametrize("alg", ["npdcae_nls", "pdcae_nls", "npdcae", "pdca"])
def test_double_well_basin(alg):
    rep = solve(double_well_1d(), _cfg(alg, "step_norm", 1e-10),
                x0=np.array([0.4]))
    assert rep.status in (CONVERGED, STATIONARY_D_ZERO)
    assert abs(rep.x[0] - 1.0) <= 1e-8


def test_bdca_rejected_search_equals_dca():
    # g1 = a x^2 barely above 1/2: the DCA point lands near 1 and every
    # extrapolation overshoots, so the monotone search adds nothing
    a = 0.5005
    prob = DcProblem(
        dim=1, g1=lambda x: a * x[0] ** 2,
        subgrad_g1=lambda x, query=None: 2 * a * x,
        g2=lambda x: (a - 0.5) * x[0] ** 2 + x[0] - 0.5,
        subgrad_g2=lambda x: (2 * a - 1) * x + 1.0,
        grad_g1_conj=lambda v: v / (2 * a), mu=2 * a,
        g1_smooth=True, meta={"f_zero": True})
    b = solve(prob, _cfg("bdca_ls", max_iter=1))
    d = solve(prob, _cfg("dca", max_iter=1))
    assert b.trace.records[0].lam == 0.0
    assert b.trace.records[0].a == 4
    np.testing.assert_array_equal(b.x, d.x)


def test_proximal_gradient_reduction(rng):
    # g2 = 0, no search, no extrapolation: plain gradient steps
    B = rng.standard_normal((6, 4))
    Q = B.T @ B + np.eye(4)
    c = rng.standard_normal(4)
    L = float(np.linalg.eigvalsh(Q)[-1])
    prob = DcProblem(dim=4, f=lambda x: 0.5 * x @ Q @ x - c @ x,
                     grad_f=lambda x: Q @ x - c, L=L, prox_g1=lambda v, t: v,
                     hess_f=SparseSymOperator(Q), g1_smooth=True)
    x = np.zeros(4)
    xstar = np.linalg.solve(Q, c)
    for k in range(1, 6):
        x = x - (Q @ x - c) / L
        rep = solve(prob, _cfg("pdca", max_iter=k))
        np.testing.assert_allclose(rep.x, x, rtol=1e-13, atol=1e-15)
    contraction = 1 - np.linalg.eigvalsh(Q)[0] / L
    e = [np.linalg.norm(solve(prob, _cfg("pdca", max_iter=k)).x - xstar)
         for k in (10, 11)]
    assert e[1] <= contraction * e[0] * (1 + 1e-9)


def test_norestart_beta_sequence(small_scad):
    _, prob = small_scad
    rep = solve(prob, _cfg("pdcae_norestart", max_iter=4))
    beta = rep.trace.column("beta")
    assert beta[0] == 0.0 and beta[1] == 0.0
    assert beta[2] == pytest.approx(0.281754, abs=1e-6)


@pytest.mark.parametrize("x, x_prev, tol, rule, expected", [
    ([0.3, 0.4], [0.3, 0.4], 1e-30, "rel_change", True),
    ([0.5, 0.0], [0.5, 1e-6], 1e-5, "rel_change", True),
    ([3.0, 0.0], [3.0, 2.5e-5], 1e-5, "rel_change", True),
    ([3.0, 0.0], [3.0, 2.5e-5], 1e-5, "step_norm", False),
])
def test_check_termination_arithmetic(x, x_prev, tol, rule, expected):
    st = IterateState(np.array(x), np.array(x_prev))
    prob = DcProblem(dim=2)
    assert check_termination(Termination(rule, tol), st, prob) is expected


def test_grad_norm_at_critical_point():
    prob = double_well_1d()
    st = IterateState(np.array([1.0]), np.array([0.9]))
    assert check_termination(Termination("grad_norm", 1e-300), st, prob)
    with pytest.raises(ConfigurationError):
        solve(soft_threshold_1d(), _cfg(rule="grad_norm"))


def test_dice_bound_rule():
    truth = np.array([True, False])
    st = IterateState(np.array([0.2, -0.1]), np.zeros(2))
    assert check_termination(Termination("dice_bound", 0.985, truth), st,
                             DcProblem(dim=2))
    with pytest.raises(ConfigurationError):
        Termination("dice_bound", 0.9)


def test_nan_abort():
    prob = DcProblem(dim=1, f=lambda x: math.nan if x[0] > 0.2 else
                     0.5 * (x[0] - 1) ** 2, grad_f=lambda x: x - 1.0, L=1.0,
                     prox_g1=lambda v, t: v, g1_smooth=True)
    rep = solve(prob, _cfg("pdcae_nls"))
    assert rep.status == NAN_ABORT
    assert rep.nan_iteration == 0
    assert "NaN" in rep.message
    assert math.isnan(rep.crit_residual)


def test_max_iter_and_report_fields(small_scad):
    _, prob = small_scad
    rep = solve(prob, _cfg(max_iter=3))
    assert rep.status == MAX_ITER and rep.iterations == 3 and not rep.converged
    assert rep.n0 == 5
    assert rep.c1 == pytest.approx(rep.c_lambda * rep.mu_min / 2)
    assert rep.trace.meta["status"] == MAX_ITER
    E = rep.trace.energies()
    assert E.size == 4 and E[0] == rep.trace.meta["E0"]


@pytest.mark.parametrize("kw", [dict(algorithm="newton"), dict(max_iter=0),
                                dict(restart_period=0)])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        SolverConfig(**kw)
    with pytest.raises(ConfigurationError):
        Termination("bogus")
    with pytest.raises(ConfigurationError):
        Termination("step_norm", 0.0)


def test_wrappers(small_scad):
    _, prob = small_scad
    cfg = _cfg("dca", max_iter=5)
    a = solve_npdcae_nls(prob, cfg)
    b = solve(prob, replace(cfg, algorithm="npdcae_nls"))
    np.testing.assert_array_equal(a.x, b.x)
    c = solve_pdcae_nls(prob, cfg)
    assert c.trace.meta["algorithm"] == "pdcae_nls"
    with pytest.raises(ConfigurationError):
        solve_baseline(prob, replace(cfg, algorithm="pdcae_nls"))
    d = solve_baseline(prob, replace(cfg, algorithm="pdca"))
    assert d.trace.meta["algorithm"] == "pdca"


def test_default_preconditioner(small_scad):
    _, prob = small_scad
    assert default_preconditioner(prob, "implicit").kind == "spectral_gap"
    assert default_preconditioner(prob, "linearized").kind == "identity"
    with pytest.raises(ConfigurationError):
        default_preconditioner(DcProblem(dim=1), "implicit")


def test_x0_dimension_checked(small_scad):
    _, prob = small_scad
    with pytest.raises(ValueError):
        solve(prob, _cfg(), x0=np.zeros(3))


def test_deterministic(small_scad):
    _, prob = small_scad
    a = solve(prob, _cfg(tol=1e-9))
    b = solve(prob, _cfg(tol=1e-9))
    np.testing.assert_array_equal(a.x, b.x)
    for r, s in zip(a.trace.records, b.trace.records):
        assert replace(r, wall=0.0) == replace(s, wall=0.0)


def test_search_params_override_monotone(small_scad):
    _, prob = small_scad
    rep = solve(prob, replace(_cfg("pdca_nls", max_iter=50),
                              search=LineSearchParams(omega=0.0)))
    assert np.all(np.diff(rep.trace.energies()) <= 0)


def test_jacobi_weight_recurrence():
    img, _, prior = synthetic_two_phase(8, seed=1)
    params = GlParams(patch=3, kappa=0.5)
    prob = build_gl_problem(build_weights(img, params), prior, params)
    cfg = SolverConfig.from_profile(
        "gl", algorithm="npdcae_nls", termination=Termination("step_norm", 1e-14),
        precond=Preconditioner("jacobi", sweeps=3), max_iter=8)
    rep = solve(prob, cfg)
    from precdca.precond import QuadraticSolve
    qs = QuadraticSolve(prob.hess_fg1, Preconditioner("jacobi", sweeps=3))
    P = np.column_stack([qs.solve(e) for e in np.eye(prob.dim)])
    M = np.linalg.inv(P) - prob.hess_fg1.to_dense()
    xs = [np.zeros(prob.dim)] + [solve(prob, replace(cfg, max_iter=k)).x
                                 for k in range(1, 9)]
    for k, rec in enumerate(rep.trace.records):
        d = (xs[k + 1] - xs[k]) / (1.0 + rec.lam)
        assert rec.wdist_sq == pytest.approx(float(d @ M @ d), rel=1e-6,
                                             abs=1e-14)


def test_callback_sees_every_iterate(small_scad):
    _, prob = small_scad
    seen = []
    rep = solve(prob, _cfg(max_iter=6), callback=lambda n, x: seen.append(
        (n, x.copy())))
    assert [n for n, _ in seen] == list(range(6))
    np.testing.assert_array_equal(seen[-1][1], rep.x)
    steps = [np.linalg.norm(b[1] - a[1]) for a, b in zip(seen, seen[1:])]
    np.testing.assert_allclose(steps, rep.trace.column("step_norm")[1:],
                               rtol=1e-15)
