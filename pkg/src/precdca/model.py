"""Problem abstraction for DC objectives ``E = f + g1 - g2``.

Every solver in the package talks to a :class:`DcProblem` only.  The
problem is an immutable bundle of value, gradient, subgradient and
proximal oracles together with a few structural hints (Lipschitz
constants, Hessian operators of quadratic parts, smoothness flags) that
let the subproblem layer pick a closed-form or preconditioned solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = ["ConfigurationError", "NanEnergyError", "SparseSymOperator",
           "DcProblem", "evaluate_energy", "subgradient_g2",
           "largest_eigenvalue", "EIG_SAFETY"]

#: multiplicative safety applied to largest-eigenvalue estimates
EIG_SAFETY = 1.01


class ConfigurationError(ValueError):
    """Raised when a problem/solver combination cannot be set up."""


class NanEnergyError(FloatingPointError):
    """Raised when an energy oracle returns NaN."""


class SparseSymOperator:
    """Symmetric linear operator, dense, sparse or matrix-free.

    Parameters
    ----------
    data : ndarray or scipy.sparse matrix, optional
        Explicit storage.  Exactly one of `data` and `matvec` is given.
    matvec : callable, optional
        ``v -> S v`` for matrix-free operators.
    dim : int, optional
        Required with `matvec`.
    diagonal : ndarray, optional
        Diagonal of a matrix-free operator, if cheaply known.
    dense : callable, optional
        Returns a dense copy of a matrix-free operator (tests only).
    """

    def __init__(self, data=None, *, matvec=None, dim=None, diagonal=None,
                 dense=None):
        if (data is None) == (matvec is None):
            raise ValueError("give exactly one of data or matvec")
        if data is not None:
            if sp.issparse(data):
                data = sp.csr_matrix(data, dtype=float)
            else:
                data = np.asarray(data, dtype=float)
                if data.ndim != 2:
                    raise ValueError("operator data must be two-dimensional")
            if data.shape[0] != data.shape[1]:
                raise ValueError("operator must be square")
            self.dim = data.shape[0]
        else:
            if dim is None:
                raise ValueError("matrix-free operator needs dim")
            self.dim = int(dim)
        self.data = data
        self._matvec = matvec
        self._diag = None if diagonal is None else np.asarray(diagonal, float)
        self._dense = dense
        self._lmax = None

    @classmethod
    def identity(cls, dim, scale=1.0):
        return cls(sp.identity(dim, format="csr") * float(scale))

    @classmethod
    def gram(cls, A):
        """Matrix-free ``A^T A`` for a dense or sparse `A`."""
        if sp.issparse(A):
            A = sp.csr_matrix(A, dtype=float)
            diag = np.asarray(A.multiply(A).sum(axis=0)).ravel()
        else:
            A = np.asarray(A, dtype=float)
            diag = np.einsum("ij,ij->j", A, A)
        At = A.T

        def dense():
            G = At @ A
            return G.toarray() if sp.issparse(G) else np.asarray(G)

        return cls(matvec=lambda v: At @ (A @ v), dim=A.shape[1],
                   diagonal=diag, dense=dense)

    @property
    def is_sparse(self):
        return self.data is not None and sp.issparse(self.data)

    @property
    def is_explicit(self):
        return self.data is not None

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: {v.shape[0]} != {self.dim}")
        if self.data is not None:
            return self.data @ v
        return self._matvec(v)

    __matmul__ = apply

    def diagonal(self):
        if self.data is not None:
            if sp.issparse(self.data):
                return self.data.diagonal().astype(float)
            return np.diag(self.data).astype(float)
        if self._diag is None:
            raise ConfigurationError("operator has no diagonal available")
        return self._diag

    def to_dense(self):
        if self.data is not None:
            return self.data.toarray() if sp.issparse(self.data) \
                else self.data.copy()
        if self._dense is not None:
            return self._dense()
        eye = np.eye(self.dim)
        return np.column_stack([self.apply(e) for e in eye])

    def shifted(self, c):
        """Return ``S + c I``."""
        c = float(c)
        if self.data is not None:
            if sp.issparse(self.data):
                return SparseSymOperator(
                    self.data + c * sp.identity(self.dim, format="csr"))
            return SparseSymOperator(self.data + c * np.eye(self.dim))
        diag = None if self._diag is None else self._diag + c
        base = self
        return SparseSymOperator(
            matvec=lambda v: base.apply(v) + c * v, dim=self.dim,
            diagonal=diag, dense=lambda: base.to_dense() + c * np.eye(base.dim))

    def __add__(self, other):
        if not isinstance(other, SparseSymOperator):
            return NotImplemented
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        if self.data is not None and other.data is not None:
            a, b = self.data, other.data
            if sp.issparse(a) and sp.issparse(b):
                return SparseSymOperator(sp.csr_matrix(a + b))
            a = a.toarray() if sp.issparse(a) else a
            b = b.toarray() if sp.issparse(b) else b
            return SparseSymOperator(a + b)
        try:
            diag = self.diagonal() + other.diagonal()
        except ConfigurationError:
            diag = None
        return SparseSymOperator(
            matvec=lambda v: self.apply(v) + other.apply(v), dim=self.dim,
            diagonal=diag, dense=lambda: self.to_dense() + other.to_dense())

    def quad(self, v):
        """``<S v, v>``."""
        return float(np.dot(self.apply(v), v))

    def largest_eigenvalue(self):
        """Largest eigenvalue (cached), computed with Lanczos."""
        if self._lmax is None:
            self._lmax = largest_eigenvalue(self)
        return self._lmax

    def is_symmetric(self, rng=None, trials=5, rtol=1e-12):
        rng = np.random.default_rng(rng)
        for _ in range(trials):
            u = rng.standard_normal(self.dim)
            v = rng.standard_normal(self.dim)
            a = np.dot(self.apply(u), v)
            b = np.dot(u, self.apply(v))
            scale = max(abs(a), abs(b), 1.0)
            if abs(a - b) > rtol * scale:
                return False
        return True


def largest_eigenvalue(op):
    """Largest eigenvalue of a symmetric PSD operator.

    Small operators use a dense symmetric eigensolver; larger ones use
    ARPACK Lanczos with a fixed start vector so the result is
    reproducible.
    """
    n = op.dim
    if n <= 64:
        return float(np.linalg.eigvalsh(op.to_dense())[-1])
    lin = spla.LinearOperator((n, n), matvec=op.apply, dtype=float)
    v0 = np.ones(n) / np.sqrt(n)
    val = spla.eigsh(lin, k=1, which="LA", v0=v0, tol=1e-12,
                     return_eigenvectors=False)
    return float(val[0])


def _zero(x):
    return 0.0


def _zero_grad(x):
    return np.zeros_like(x, dtype=float)


@dataclass(frozen=True, eq=False)
class DcProblem:
    """Immutable DC objective ``E = f + g1 - g2``.

    Parameters
    ----------
    dim : int
        Ambient dimension.
    f, grad_f : callable
        Smooth part and its gradient.  ``L`` is the Lipschitz constant of
        ``grad_f``.
    g1, subgrad_g1 : callable
        Convex part kept implicit.  ``subgrad_g1(x, query=None)`` returns
        an element of the subdifferential; at nonsmooth points the sign
        of `query` breaks ties.
    g2, subgrad_g2 : callable
        Convex part that is linearized each iteration.
    prox_g1 : callable, optional
        ``prox_g1(v, t) = argmin_y g1(y) + ||y - v||^2 / (2 t)`` with `t`
        a scalar or a per-coordinate array.
    grad_g1_conj : callable, optional
        ``v -> argmin_y g1(y) - <v, y>``, available when g1 is strongly
        convex.  Enables classical DCA steps without a proximal term.
    hess_f, hess_g1 : SparseSymOperator, optional
        Hessians of f or g1 when these are quadratic.
    mu, sigma, L_g2 : float
        Strong convexity modulus of g1, local upper modulus of g1
        (nonsmooth regime) and Lipschitz constant of grad g2.
    l1_weight : float, optional
        Set when g1 is ``l1_weight * ||x||_1``.  Used by the
        criticality residual.
    line : callable, optional
        ``line(x, d)`` returning ``t -> E(x + t d)``; a cheaper path
        for problems with structure.
    """

    dim: int
    f: Callable = _zero
    grad_f: Callable = _zero_grad
    g1: Callable = _zero
    subgrad_g1: Callable = None
    g2: Callable = _zero
    subgrad_g2: Callable = _zero_grad
    L: float = 0.0
    prox_g1: Optional[Callable] = None
    grad_g1_conj: Optional[Callable] = None
    hess_f: Optional[SparseSymOperator] = None
    hess_g1: Optional[SparseSymOperator] = None
    mu: float = 0.0
    sigma: Optional[float] = None
    L_g2: Optional[float] = None
    g1_smooth: bool = False
    g2_smooth: bool = True
    l1_weight: Optional[float] = None
    line: Optional[Callable] = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if self.L < 0 or self.mu < 0:
            raise ValueError("L and mu must be nonnegative")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive when declared")
        if self.L_g2 is not None and self.L_g2 < 0:
            raise ValueError("L_g2 must be nonnegative")
        if self.subgrad_g1 is None:
            object.__setattr__(self, "subgrad_g1",
                               lambda x, query=None: np.zeros_like(x))

    @property
    def smooth(self):
        """True when E is differentiable everywhere."""
        return self.g1_smooth and self.g2_smooth

    @property
    def fg1_quadratic(self):
        return self.hess_f is not None and self.hess_g1 is not None

    @cached_property
    def grad_f0(self):
        """Gradient of f at the origin (linear term of a quadratic f)."""
        return np.asarray(self.grad_f(np.zeros(self.dim)), dtype=float)

    @cached_property
    def grad_g10(self):
        return np.asarray(self.subgrad_g1(np.zeros(self.dim)), dtype=float)

    @cached_property
    def hess_fg1(self):
        if not self.fg1_quadratic:
            return None
        return self.hess_f + self.hess_g1

    def energy(self, x):
        return evaluate_energy(self, x)

    def grad_energy(self, x):
        """Gradient of E; only meaningful for smooth problems."""
        x = _check(self, x)
        return (self.grad_f(x) + self.subgrad_g1(x) - self.subgrad_g2(x))

    def restrict(self, x, d):
        """Return ``t -> E(x + t d)``."""
        if self.line is not None:
            return self.line(x, d)
        return lambda t: evaluate_energy(self, x + t * d)


def _check(problem, x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != problem.dim:
        raise ValueError(
            f"dimension mismatch: expected ({problem.dim},), got {x.shape}")
    return x


def evaluate_energy(problem, x):
    """Return ``f(x) + g1(x) - g2(x)``.

    ``+inf`` is returned when x lies outside the domain of g1.
    """
    x = _check(problem, x)
    a = problem.g1(x)
    if a == np.inf:
        return np.inf
    return float(problem.f(x) + a - problem.g2(x))


def subgradient_g2(problem, x):
    """Deterministic element of the subdifferential of g2 at x."""
    x = _check(problem, x)
    return np.asarray(problem.subgrad_g2(x), dtype=float)
