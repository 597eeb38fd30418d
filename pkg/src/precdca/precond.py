"""Subproblem solvers.

Two subproblems occur.  The implicit one keeps ``f + g1`` intact::

    xbar = argmin_y  -<xi, y> + 1/2 ||y - y_n||_M^2 + f(y) + g1(y)

and the linearized one replaces f by its tangent at the anchor::

    xbar = argmin_y  <grad f(y_n) - xi, y> + L/2 ||y - y_n||_M^2 + g1(y).

When the smooth implicit part is quadratic with Hessian ``A`` the
solution is one preconditioned iteration ``y_n + Mbb^{-1}(b_n - A y_n)``
with ``Mbb = A + M``.  The weight ``W`` that the proximal term actually
uses (``M`` in the implicit case, ``L M`` in the linearized case) is
exposed for the Lyapunov diagnostics.

Preconditioner kinds
--------------------
identity      ``M = scale * I``
spectral_gap  ``M = s I - hess f`` with ``s`` above the top eigenvalue
exact         explicit ``M`` (``weight`` or ``scale * I``), direct solve
cg            explicit ``M``, inner conjugate gradients
jacobi        damped Jacobi sweeps on the quadratic system; ``M`` is
              whatever the sweeps imply (it is SPD by construction)
none          no proximal term, classical DCA step through the
              conjugate gradient of g1
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from precdca.model import (ConfigurationError, EIG_SAFETY, SparseSymOperator)

__all__ = ["Preconditioner", "QuadraticSolve", "SubproblemSolver",
           "SubproblemResult", "preconditioned_step",
           "solve_implicit_subproblem", "solve_linearized_subproblem",
           "make_subproblem", "jacobi_weight_bound"]

KINDS = ("identity", "spectral_gap", "exact", "cg", "jacobi", "none")


@dataclass(frozen=True)
class Preconditioner:
    """Choice of proximal weight and inner solver.

    Attributes
    ----------
    kind : str
        One of ``identity``, ``spectral_gap``, ``exact``, ``cg``,
        ``jacobi``, ``none``.
    scale : float, optional
        Multiplier of the identity.  For ``spectral_gap`` the default is
        ``1.01`` times the top eigenvalue of the Hessian of f.
    weight : SparseSymOperator, optional
        Explicit ``M`` for ``exact`` and ``cg``.
    sweeps : int
        Jacobi sweeps per outer iteration.
    damping : float
        Jacobi step is ``damping / G`` with ``G`` a Gershgorin bound of
        the diagonally scaled operator.
    tol, max_inner : float, int
        CG stops when successive inner iterates differ by less than
        `tol` or after `max_inner` steps.
    """

    kind: str = "identity"
    scale: Optional[float] = None
    weight: Optional[SparseSymOperator] = None
    sweeps: int = 5
    damping: float = 0.9
    tol: float = 1e-11
    max_inner: int = 1000

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown preconditioner kind {self.kind!r}")
        if self.scale is not None and self.scale < 0:
            raise ConfigurationError("scale must be nonnegative")
        if self.sweeps < 1:
            raise ConfigurationError("sweeps must be at least 1")
        if not 0 < self.damping <= 1:
            raise ConfigurationError("damping must lie in (0, 1]")

    def explicit_weight(self, dim):
        if self.weight is not None:
            if self.weight.dim != dim:
                raise ConfigurationError("weight dimension mismatch")
            return self.weight
        return SparseSymOperator.identity(
            dim, 1.0 if self.scale is None else self.scale)


def jacobi_weight_bound(k, s):
    """``s (1-s)^k / (1 - (1-s)^k)``; decreasing in s on (0, 1]."""
    t = (1.0 - s) ** k
    return s * t / (1.0 - t)


def _gershgorin_ratio(Q):
    data = Q.data
    if data is None:
        raise ConfigurationError("jacobi sweeps need an explicit operator")
    if sp.issparse(data):
        rows = np.asarray(abs(data).sum(axis=1)).ravel()
    else:
        rows = np.abs(data).sum(axis=1)
    diag = Q.diagonal()
    if np.any(diag <= 0):
        raise ConfigurationError("jacobi sweeps need a positive diagonal")
    offdiag = rows - np.abs(diag)
    return float(np.max(rows / diag)), bool(np.all(offdiag < diag))


class QuadraticSolve:
    """Approximate ``Mbb^{-1}`` for ``Mbb = A + W``.

    Parameters
    ----------
    A : SparseSymOperator
        Hessian of the implicit quadratic part.
    precond : Preconditioner
    shift : float
        Multiplier of the explicit weight (``L`` in the linearized
        subproblem, 1 otherwise).  For Jacobi the sweeps run on
        ``A + shift I``.
    """

    def __init__(self, A, precond, shift=1.0):
        self.A = A
        self.precond = precond
        self.kind = precond.kind
        self.shift = float(shift)
        self.inner_iters = 0
        self.inner_residual = 0.0
        self.flagged = False
        dim = A.dim
        if self.kind == "jacobi":
            jac_shift = self.shift if self._linearized_jacobi else 0.0
            Q = A.shifted(jac_shift) if jac_shift else A
            ratio, dominant = _gershgorin_ratio(Q)
            self.diag_dominant = dominant
            if not dominant:
                warnings.warn("jacobi operator is not strictly diagonally "
                              "dominant", RuntimeWarning, stacklevel=2)
            self.Q = Q
            self.Dw = Q.diagonal() * ratio / precond.damping
            self.implicit = True
            self.weight = None
            self.mu_min = float(np.min(self.Dw)) * jacobi_weight_bound(
                precond.sweeps, precond.damping) + jac_shift
            return
        self.implicit = False
        M = precond.explicit_weight(dim)
        self.weight = M if self.shift == 1.0 else _scaled(M, self.shift)
        self.Mbb = A + self.weight
        self.mu_min = _min_eig(self.weight)
        if self.kind in ("identity", "exact"):
            self._factor()
        elif self.kind != "cg":
            raise ConfigurationError(
                f"kind {self.kind!r} cannot solve a quadratic subproblem")

    _linearized_jacobi = False

    def _factor(self):
        Mbb = self.Mbb
        if Mbb.is_sparse:
            solve = spla.factorized(sp.csc_matrix(Mbb.data))
            self._solve = solve
        else:
            cf = sla.cho_factor(Mbb.to_dense())
            self._solve = lambda r: sla.cho_solve(cf, r)

    def solve(self, r):
        r = np.asarray(r, float)
        if self.kind == "jacobi":
            z = r / self.Dw
            for _ in range(self.precond.sweeps - 1):
                z = z + (r - self.Q.apply(z)) / self.Dw
            self.inner_iters = self.precond.sweeps
            return z
        if self.kind == "cg":
            return self._cg(r)
        return np.asarray(self._solve(r), float)

    def _cg(self, r):
        tol, max_inner = self.precond.tol, self.precond.max_inner
        z = np.zeros_like(r)
        res = r.copy()
        p = res.copy()
        rr = float(np.dot(res, res))
        it = 0
        converged = rr == 0.0
        while not converged and it < max_inner:
            q = self.Mbb.apply(p)
            alpha = rr / float(np.dot(p, q))
            z += alpha * p
            res -= alpha * q
            it += 1
            if abs(alpha) * np.linalg.norm(p) < tol:
                converged = True
                break
            rr_new = float(np.dot(res, res))
            p = res + (rr_new / rr) * p
            rr = rr_new
        self.inner_iters = it
        self.inner_residual = float(np.linalg.norm(r - self.Mbb.apply(z)))
        self.flagged = not converged
        return z

    def weight_norm_sq(self, v):
        """``<W v, v>`` for explicit weights."""
        if self.implicit:
            raise ConfigurationError("implicit weight has no direct norm")
        return self.weight.quad(v)


class _LinearizedJacobi(QuadraticSolve):
    _linearized_jacobi = True


def _scaled(M, c):
    if M.is_explicit:
        return SparseSymOperator(M.data * c)
    return SparseSymOperator(matvec=lambda v: c * M.apply(v), dim=M.dim,
                             dense=lambda: c * M.to_dense())


def _min_eig(M):
    if M.is_sparse:
        d = M.data
        off = d - sp.diags(d.diagonal())
        if off.nnz == 0 or not np.any(off.data):
            return float(np.min(d.diagonal()))
    if M.dim <= 400:
        return float(np.linalg.eigvalsh(M.to_dense())[0])
    lin = spla.LinearOperator((M.dim, M.dim), matvec=M.apply, dtype=float)
    v0 = np.ones(M.dim) / np.sqrt(M.dim)
    return float(spla.eigsh(lin, k=1, which="SA", v0=v0, tol=1e-10,
                            return_eigenvectors=False)[0])


def preconditioned_step(A, b_n, y_n, precond, shift=1.0):
    """One preconditioned iteration ``y_n + Mbb^{-1}(b_n - A y_n)``.

    ``Mbb = A + shift * M``; for Jacobi the sweeps run on ``A`` itself
    (the implied M is SPD).
    """
    if not isinstance(A, SparseSymOperator):
        A = SparseSymOperator(A)
    qs = QuadraticSolve(A, precond, shift)
    y_n = np.asarray(y_n, float)
    return y_n + qs.solve(np.asarray(b_n, float) - A.apply(y_n))


@dataclass
class SubproblemResult:
    xbar: np.ndarray
    residual: Optional[np.ndarray] = None
    inner_iters: int = 0
    inner_residual: float = 0.0
    flagged: bool = False


class SubproblemSolver:
    """Set up once per run; ``step(y, xi)`` returns the subproblem solution.

    Parameters
    ----------
    problem : DcProblem
    scheme : {"implicit", "linearized"}
    precond : Preconditioner
    L : float, optional
        Curvature constant of the linearized scheme, default
        ``problem.L``.

    Attributes
    ----------
    implicit_weight : bool
        True when the proximal weight is only defined through the inner
        solver (Jacobi).  The solver then tracks ``Mbb (xbar - x)``
        through a recurrence.
    A_imp : SparseSymOperator or None
        Hessian of the implicit quadratic part (needed to recover
        ``<W v, v>`` from ``<Mbb v, v>``).
    mu_min : float
        Lower estimate of the smallest eigenvalue of W.
    """

    def __init__(self, problem, scheme, precond, L=None):
        if scheme not in ("implicit", "linearized"):
            raise ConfigurationError(f"unknown scheme {scheme!r}")
        self.problem = problem
        self.scheme = scheme
        self.precond = precond
        self.L = float(problem.L if L is None else L)
        self.quad = None
        self.A_imp = None
        self.implicit_weight = False
        kind = precond.kind
        p = problem
        if scheme == "implicit":
            if kind == "none":
                if p.grad_g1_conj is None or not p.meta.get("f_zero"):
                    raise ConfigurationError(
                        "a step without proximal term needs f = 0 and the "
                        "conjugate gradient of g1")
                self.path = "conj"
                self.mu_min = 0.0
            elif kind == "spectral_gap":
                if p.hess_f is None or p.prox_g1 is None:
                    raise ConfigurationError(
                        "spectral_gap needs a quadratic f and a prox for g1")
                lmax = p.hess_f.largest_eigenvalue()
                s = EIG_SAFETY * lmax if precond.scale is None \
                    else float(precond.scale)
                if s < lmax:
                    raise ConfigurationError(
                        "spectral_gap scale below the top eigenvalue")
                self.s = s
                self.path = "gap"
                self.mu_min = s - lmax
            elif p.fg1_quadratic:
                self.A_imp = p.hess_fg1
                self.b0 = -(p.grad_f0 + p.grad_g10)
                self.quad = QuadraticSolve(self.A_imp, precond, 1.0)
                self.implicit_weight = self.quad.implicit
                self.path = "quad"
                self.mu_min = self.quad.mu_min
            else:
                raise ConfigurationError(
                    f"implicit subproblem not supported with kind {kind!r} "
                    "for this problem")
        else:
            if self.L <= 0 and kind not in ("jacobi",):
                raise ConfigurationError("linearized scheme needs L > 0")
            if kind == "identity" and p.prox_g1 is not None:
                self.s = 1.0 if precond.scale is None else float(precond.scale)
                self.path = "prox"
                self.mu_min = self.L * self.s
            elif p.hess_g1 is not None and kind in ("identity", "exact",
                                                    "cg", "jacobi"):
                self.A_imp = p.hess_g1
                cls = _LinearizedJacobi if kind == "jacobi" else QuadraticSolve
                self.quad = cls(self.A_imp, precond, self.L)
                self.implicit_weight = self.quad.implicit
                self.path = "quad"
                self.mu_min = self.quad.mu_min
            else:
                raise ConfigurationError(
                    f"linearized subproblem not supported with kind {kind!r}; "
                    "a non-diagonal weight needs a quadratic g1")

    def step(self, y, xi):
        p = self.problem
        if self.scheme == "implicit":
            if self.path == "conj":
                return SubproblemResult(np.asarray(p.grad_g1_conj(xi), float))
            if self.path == "gap":
                s = self.s
                v = (s * y - p.hess_f.apply(y) + xi - p.grad_f0) / s
                return SubproblemResult(np.asarray(p.prox_g1(v, 1.0 / s), float))
            r = self.b0 + xi - self.A_imp.apply(y)
        else:
            g = p.grad_f(y) - xi
            if self.path == "prox":
                t = 1.0 / (self.L * self.s)
                return SubproblemResult(np.asarray(p.prox_g1(y - t * g, t),
                                                   float))
            r = -(g + p.grad_g10 + self.A_imp.apply(y))
        z = self.quad.solve(r)
        return SubproblemResult(y + z, r, self.quad.inner_iters,
                                self.quad.inner_residual, self.quad.flagged)

    def weight_norm_sq(self, v):
        """``<W v, v>`` for explicit weights."""
        if self.path == "conj":
            return 0.0
        if self.path == "gap":
            return self.s * float(np.dot(v, v)) - self.problem.hess_f.quad(v)
        if self.path == "prox":
            return self.L * self.s * float(np.dot(v, v))
        return self.quad.weight_norm_sq(v)


def make_subproblem(problem, scheme, precond, L=None):
    return SubproblemSolver(problem, scheme, precond, L)


def solve_implicit_subproblem(problem, y, xi, precond):
    """Solve the implicit subproblem once (convenience wrapper)."""
    return make_subproblem(problem, "implicit", precond).step(
        np.asarray(y, float), np.asarray(xi, float)).xbar


def solve_linearized_subproblem(problem, y, xi, L, precond):
    """Solve the linearized subproblem once (convenience wrapper)."""
    return make_subproblem(problem, "linearized", precond, L).step(
        np.asarray(y, float), np.asarray(xi, float)).xbar
