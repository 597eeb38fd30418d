"""SCAD and Huber-SCAD regularized least squares.

The SCAD penalty is written as a DC function ``S(x) = mu ||x||_1 - sum
tilde_s(x_i)`` with the convex, C^1 piece::

    tilde_s(t) = 0                               |t| <= mu
               = (|t| - mu)^2 / (2 (theta - 1))  mu < |t| < theta mu
               = mu |t| - mu^2 (theta + 1) / 2   |t| >= theta mu

Replacing ``|.|`` by the Huber function ``H(t, alpha)`` gives a C^1
objective.  Both problems are ``1/2 ||A x - b||^2 + penalty``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from precdca.model import DcProblem, EIG_SAFETY, SparseSymOperator

__all__ = ["ScadParams", "LeastSquaresData", "tilde_s", "tilde_s_grad",
           "scad_value", "scad_penalty", "huber", "huber_grad",
           "huber_scad_value", "soft_threshold", "prox_huber",
           "build_scad_problem", "synthetic_instance"]


@dataclass(frozen=True)
class ScadParams:
    """SCAD parameters; ``alpha`` defaults to ``mu / 2``."""

    mu: float = 5e-4
    theta: float = 10.0
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.theta <= 1:
            raise ValueError("theta must exceed 1")
        if self.alpha is None:
            object.__setattr__(self, "alpha", 0.5 * self.mu)
        if not 0 < self.alpha < self.mu:
            raise ValueError("need 0 < alpha < mu")


def tilde_s(x, mu, theta):
    """Convex part removed from the l1 norm; vectorized."""
    a = np.abs(np.asarray(x, dtype=float))
    mid = (a - mu) ** 2 / (2.0 * (theta - 1.0))
    out = mu * a - mu * mu * (theta + 1.0) / 2.0
    out = np.where(a < theta * mu, mid, out)
    return np.where(a <= mu, 0.0, out)


def tilde_s_grad(x, mu, theta):
    """``sign(x) [min(theta mu, |x|) - mu]_+ / (theta - 1)``."""
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    return np.sign(x) * np.maximum(np.minimum(theta * mu, a) - mu, 0.0) \
        / (theta - 1.0)


def scad_value(x, mu, theta):
    """``S(x) = mu ||x||_1 - sum tilde_s(x_i)``."""
    x = np.asarray(x, dtype=float)
    return float(mu * np.sum(np.abs(x)) - np.sum(tilde_s(x, mu, theta)))


def scad_penalty(x, mu, theta):
    """Per-coordinate SCAD penalty values."""
    x = np.asarray(x, dtype=float)
    return mu * np.abs(x) - tilde_s(x, mu, theta)


def huber(x, alpha):
    a = np.abs(np.asarray(x, dtype=float))
    return np.where(a <= alpha, a * a / (2.0 * alpha), a - alpha / 2.0)


def huber_grad(x, alpha):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) <= alpha, x / alpha, np.sign(x))


def huber_scad_value(x, mu, theta, alpha):
    """Four-region Huber-SCAD penalty ``mu H(x, alpha) - tilde_s(x)``.

    Written region by region rather than as the difference so the two
    forms can be checked against each other.
    """
    a = np.abs(np.asarray(x, dtype=float))
    r1 = mu * a * a / (2.0 * alpha)
    r2 = mu * (a - alpha / 2.0)
    r3 = mu * (a - alpha / 2.0) - (a - mu) ** 2 / (2.0 * (theta - 1.0))
    r4 = mu * (mu * (theta + 1.0) - alpha) / 2.0 + 0.0 * a
    return np.where(a <= alpha, r1,
                    np.where(a <= mu, r2, np.where(a < theta * mu, r3, r4)))


def soft_threshold(v, t):
    """``sign(v) max(|v| - t, 0)``."""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def prox_huber(v, t, mu, alpha):
    """``argmin_y mu H(y, alpha) + (y - v)^2 / (2 t)``, elementwise."""
    v = np.asarray(v, dtype=float)
    t = np.broadcast_to(np.asarray(t, dtype=float), v.shape)
    inner = v / (1.0 + mu * t / alpha)
    outer = v - np.sign(v) * mu * t
    return np.where(np.abs(v) <= alpha + mu * t, inner, outer)


class LeastSquaresData:
    """Design matrix and observations of ``1/2 ||A x - b||^2``.

    Attributes
    ----------
    A : ndarray or scipy.sparse matrix, shape (m, k)
    b : ndarray, shape (m,)
    gram : SparseSymOperator
        Matrix-free ``A^T A``.
    lam_max : float
        Largest eigenvalue of ``A^T A``.
    lam : float
        ``1.01 * lam_max``; used as the Lipschitz constant and as the
        spectral-gap scale.
    """

    def __init__(self, A, b, x_true=None, source=""):
        if sp.issparse(A):
            A = sp.csr_matrix(A, dtype=float)
        else:
            A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        if A.ndim != 2 or b.shape != (A.shape[0],):
            raise ValueError("dimension mismatch between A and b")
        self.A = A
        self.b = b
        self.x_true = x_true
        self.source = source
        self.gram = SparseSymOperator.gram(A)
        self._Atb = None

    @property
    def shape(self):
        return self.A.shape

    @property
    def lam_max(self):
        return self.gram.largest_eigenvalue()

    @property
    def lam(self):
        return EIG_SAFETY * self.lam_max

    @property
    def Atb(self):
        if self._Atb is None:
            self._Atb = np.asarray(self.A.T @ self.b, dtype=float)
        return self._Atb

    def residual(self, x):
        return self.A @ x - self.b

    def value(self, x):
        r = self.A @ x - self.b
        return 0.5 * float(np.dot(r, r))

    def grad(self, x):
        return np.asarray(self.A.T @ (self.A @ x - self.b), dtype=float)


def synthetic_instance(m, k, sparsity, noise=0.01, seed=0):
    """Gaussian sparse-recovery instance.

    ``A`` has i.i.d. ``N(0, 1/m)`` entries, the ground truth has
    `sparsity` entries equal to +-1 at random positions and
    ``b = A x_true + noise * N(0, I)``.
    """
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, k)) / np.sqrt(m)
    x_true = np.zeros(k)
    idx = rng.choice(k, size=sparsity, replace=False)
    x_true[idx] = rng.choice([-1.0, 1.0], size=sparsity)
    b = A @ x_true + noise * rng.standard_normal(m)
    return LeastSquaresData(A, b, x_true=x_true,
                            source=f"synthetic(m={m},k={k},s={sparsity},"
                                   f"noise={noise},seed={seed})")


def _l1_subgrad(mu):
    def sub(x, query=None):
        g = np.sign(x)
        if query is not None:
            zero = x == 0
            g = np.where(zero, np.sign(query), g)
        return mu * g
    return sub


def build_scad_problem(data, params=ScadParams(), variant="l1",
                       split="standard", sigma=1.0):
    """SCAD (``variant="l1"``) or Huber-SCAD (``variant="huber"``) problem.

    Parameters
    ----------
    data : LeastSquaresData
    params : ScadParams
    variant : {"l1", "huber"}
    split : {"standard", "bdca"}
        ``standard``: f is the least-squares term, g1 the l1 or Huber
        term, g2 the sum of ``tilde_s``.  ``bdca``: f = 0,
        ``g1 = penalty + lam/2 ||x||^2`` and
        ``g2 = lam/2 ||x||^2 + sum tilde_s - 1/2 ||A x - b||^2``, which
        makes each classical DCA step explicit.
    sigma : float
        Upper modulus reported for the nonsmooth regime (l1 only).
    """
    if variant not in ("l1", "huber"):
        raise ValueError(f"unknown variant {variant!r}")
    if split not in ("standard", "bdca"):
        raise ValueError(f"unknown split {split!r}")
    mu, theta, alpha = params.mu, params.theta, params.alpha
    A, b = data.A, data.b
    k = A.shape[1]

    if variant == "l1":
        def pen(x):
            return mu * float(np.sum(np.abs(x)))
        pen_sub = _l1_subgrad(mu)

        def pen_prox(v, t):
            return soft_threshold(v, mu * np.asarray(t, dtype=float))
    else:
        def pen(x):
            return mu * float(np.sum(huber(x, alpha)))

        def pen_sub(x, query=None):
            return mu * huber_grad(x, alpha)

        def pen_prox(v, t):
            return prox_huber(v, t, mu, alpha)

    def ts(x):
        return float(np.sum(tilde_s(x, mu, theta)))

    def ts_grad(x):
        return tilde_s_grad(x, mu, theta)

    smooth1 = variant == "huber"
    meta = {"family": "scad", "variant": variant, "split": split,
            "mu": mu, "theta": theta, "alpha": alpha}

    if split == "standard":
        def line(x, d):
            r0 = A @ x - b
            Ad = A @ d

            def phi(t):
                z = x + t * d
                r = r0 + t * Ad
                return float(0.5 * np.dot(r, r) + pen(z) - ts(z))
            return phi

        return DcProblem(
            dim=k, f=data.value, grad_f=data.grad, g1=pen, subgrad_g1=pen_sub,
            g2=ts, subgrad_g2=ts_grad, L=data.lam, prox_g1=pen_prox,
            hess_f=data.gram, mu=0.0,
            sigma=None if smooth1 else sigma, L_g2=1.0 / (theta - 1.0),
            g1_smooth=smooth1, g2_smooth=True,
            l1_weight=None if smooth1 else mu, line=line,
            name=f"scad-{variant}", meta=meta)

    lam = data.lam

    def g1(x):
        return pen(x) + 0.5 * lam * float(np.dot(x, x))

    def g1_sub(x, query=None):
        return pen_sub(x, query) + lam * x

    def g1_prox(v, t):
        t = np.asarray(t, dtype=float)
        a = lam + 1.0 / t
        return pen_prox(v / (t * a), 1.0 / a)

    def g1_conj_grad(v):
        return pen_prox(np.asarray(v, float) / lam, 1.0 / lam)

    def g2(x):
        return 0.5 * lam * float(np.dot(x, x)) + ts(x) - data.value(x)

    def g2_grad(x):
        return lam * x + ts_grad(x) - data.grad(x)

    meta["f_zero"] = True
    return DcProblem(
        dim=k, g1=g1, subgrad_g1=g1_sub, g2=g2, subgrad_g2=g2_grad,
        L=0.0, prox_g1=g1_prox, grad_g1_conj=g1_conj_grad, mu=lam,
        sigma=None if smooth1 else sigma, L_g2=lam + 1.0 / (theta - 1.0),
        g1_smooth=smooth1, g2_smooth=True,
        l1_weight=None if smooth1 else mu, name=f"scad-{variant}-bdca",
        meta=meta)
