"""Nonlocal graph Ginzburg-Landau segmentation.

Energy over pixel labels ``x``::

    E(x) = sum_{i,j} tau/2 w_ij (x_i - x_j)^2          (ordered pairs)
         + 1/tau * 1/4 sum (x_i^2 - 1)^2
         + gamma/2 sum Lam_i (x_i - y_i)^2

The ordered double sum equals ``tau * x^T L_w x`` with ``L_w = D - W``.
The double well enters E with a plus sign, so keeping ``f + g1``
quadratic means subtracting it inside g2 (convex splitting)::

    f  = gamma/2 sum Lam_i (x_i - y_i)^2
    g1 = tau x^T L_w x + c/(2 tau) ||x||^2
    g2 = 1/tau (c/2 ||x||^2 - 1/4 sum (x_i^2 - 1)^2)

g2 has curvature ``(c + 1 - 3 x_i^2) / tau`` and is convex on the box
``|x_i| <= sqrt((c + 1) / 3)``; the default ``c = 2`` covers
``[-1, 1]^N``, where minimizers lie (clipping to [-1, 1] lowers every
term).  ``f + g1`` is quadratic with Hessian
``2 tau L_w + gamma Lam + c/tau I``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view

from precdca.model import DcProblem, SparseSymOperator

__all__ = ["GlParams", "GraphWeights", "PriorLabels", "effective_box",
           "build_weights", "laplacian", "gl_energy_terms",
           "build_gl_problem", "dice", "segment", "synthetic_two_phase",
           "random_priors"]


@dataclass(frozen=True)
class GlParams:
    """Model parameters.

    ``kappa`` None means the bandwidth is tuned from the image: ``kappa^2``
    is the mean squared patch distance over a seeded sample of in-box
    pairs (fraction `sample_fraction`).
    """

    tau: float = 10.0
    gamma: float = 10.0
    box: int = 25
    patch: int = 5
    kappa: Optional[float] = None
    convexify_c: float = 2.0
    sample_fraction: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.box % 2 == 0 or self.patch % 2 == 0:
            raise ValueError("box and patch must be odd")
        if self.tau <= 0 or self.gamma <= 0:
            raise ValueError("tau and gamma must be positive")
        if self.kappa is not None and self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.convexify_c < 0:
            raise ValueError("convexify_c must be nonnegative")


@dataclass(frozen=True, eq=False)
class GraphWeights:
    """Symmetric nonnegative weights on the pixel grid."""

    W: sp.csr_matrix
    shape: tuple
    kappa2: float
    box: int

    @property
    def n(self):
        return self.W.shape[0]

    @property
    def degree(self):
        return np.asarray(self.W.sum(axis=1)).ravel()


@dataclass(frozen=True, eq=False)
class PriorLabels:
    """Fidelity mask ``lam`` (0/1) and labels ``y`` in {-1, 0, +1}."""

    lam: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        if lam.shape != y.shape:
            raise ValueError("mask and labels differ in size")
        if np.any((y != 0) & (lam == 0)):
            raise ValueError("labelled pixels must have lam = 1")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "y", y)


def effective_box(box, shape):
    """Shrink the window for small images to at most ``2 min(H, W) / 3``."""
    cap = int(2 * min(shape) // 3)
    if cap % 2 == 0:
        cap -= 1
    return max(1, min(box, cap))


def _offsets(R):
    for dy in range(0, R + 1):
        for dx in range(-R, R + 1):
            if dy == 0 and dx <= 0:
                continue
            yield dy, dx


def build_weights(image, params=GlParams()):
    """Gaussian patch-similarity weights inside a square window.

    Parameters
    ----------
    image : ndarray, shape (H, W)
        Intensities in [0, 1].
    params : GlParams

    Returns
    -------
    GraphWeights
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("image must be two-dimensional")
    H, Wd = img.shape
    p = params.patch
    if H < p or Wd < p:
        raise ValueError("image smaller than the patch")
    box = effective_box(params.box, img.shape)
    R = box // 2
    r = p // 2
    pad = np.pad(img, r, mode="symmetric")
    P = sliding_window_view(pad, (p, p)).reshape(H * Wd, p * p)
    idx = np.arange(H * Wd).reshape(H, Wd)

    rows, cols, dist = [], [], []
    for dy, dx in _offsets(R):
        y0, y1 = 0, H - dy
        x0, x1 = max(0, -dx), min(Wd, Wd - dx)
        if y1 <= y0 or x1 <= x0:
            continue
        i = idx[y0:y1, x0:x1].ravel()
        j = idx[y0 + dy:y1 + dy, x0 + dx:x1 + dx].ravel()
        rows.append(i)
        cols.append(j)
        diff = P[i] - P[j]
        dist.append(np.einsum("ij,ij->i", diff, diff))
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        dist = np.concatenate(dist)
    else:
        rows = cols = np.zeros(0, dtype=int)
        dist = np.zeros(0)

    if params.kappa is not None:
        kappa2 = params.kappa ** 2
    else:
        rng = np.random.default_rng(params.seed)
        size = max(1, int(round(params.sample_fraction * dist.size)))
        sample = dist[rng.choice(dist.size, size=size, replace=False)] \
            if dist.size else np.zeros(1)
        kappa2 = float(np.mean(sample))
        if kappa2 <= 0:
            kappa2 = 1.0
    w = np.maximum(np.exp(-dist / kappa2), np.finfo(float).tiny)
    n = H * Wd
    Wm = sp.coo_matrix((np.concatenate([w, w]),
                        (np.concatenate([rows, cols]),
                         np.concatenate([cols, rows]))), shape=(n, n)).tocsr()
    Wm.sort_indices()
    return GraphWeights(Wm, (H, Wd), kappa2, box)


def laplacian(weights):
    """Graph Laplacian ``D - W``."""
    return sp.csr_matrix(sp.diags(weights.degree) - weights.W)


def gl_energy_terms(x, weights, prior, params=GlParams()):
    """Return ``(dirichlet, doublewell, fidelity)``."""
    x = np.asarray(x, dtype=float)
    # literal ordered double sum; equals tau x^T L x for symmetric weights
    W = weights.W.tocoo()
    diff = x[W.row] - x[W.col]
    dirichlet = 0.5 * params.tau * float(np.dot(W.data, diff * diff))
    doublewell = 0.25 * float(np.sum((x * x - 1.0) ** 2)) / params.tau
    r = x - prior.y
    fidelity = 0.5 * params.gamma * float(np.dot(prior.lam * r, r))
    return dirichlet, doublewell, fidelity


def build_gl_problem(weights, prior, params=GlParams()):
    """DC split of the Ginzburg-Landau energy (see module docstring)."""
    n = weights.n
    if prior.lam.size != n:
        raise ValueError("prior size does not match the graph")
    tau, gamma, c = params.tau, params.gamma, params.convexify_c
    Lw = laplacian(weights)
    lam, y = prior.lam, prior.y
    H_g1 = sp.csr_matrix(2.0 * tau * Lw + (c / tau) * sp.identity(n))
    H_f = sp.csr_matrix(sp.diags(gamma * lam))

    def f(x):
        r = x - y
        return 0.5 * gamma * float(np.dot(lam * r, r))

    def grad_f(x):
        return gamma * lam * (x - y)

    def g1(x):
        return tau * float(np.dot(x, Lw @ x)) + 0.5 * c / tau * float(np.dot(x, x))

    def g1_grad(x, query=None):
        return H_g1 @ x

    def g2(x):
        return (0.5 * c * float(np.dot(x, x))
                - 0.25 * float(np.sum((x * x - 1.0) ** 2))) / tau

    def g2_grad(x):
        return ((c + 1.0) * x - x ** 3) / tau

    def line(x, d):
        Lx, Ld = Lw @ x, Lw @ d
        q0, q1, q2 = float(np.dot(x, Lx)), float(np.dot(d, Lx)), float(np.dot(d, Ld))
        r0 = x - y

        def phi(t):
            z = x + t * d
            r = r0 + t * d
            return float(tau * (q0 + 2.0 * t * q1 + t * t * q2)
                         + 0.25 * float(np.sum((z * z - 1.0) ** 2)) / tau
                         + 0.5 * gamma * float(np.dot(lam * r, r)))
        return phi

    return DcProblem(
        dim=n, f=f, grad_f=grad_f, g1=g1, subgrad_g1=g1_grad, g2=g2,
        subgrad_g2=g2_grad, L=gamma * float(max(np.max(lam), 0.0)) or gamma,
        hess_f=SparseSymOperator(H_f), hess_g1=SparseSymOperator(H_g1),
        mu=c / tau, g1_smooth=True, g2_smooth=True, line=line,
        name="graph-gl",
        meta={"family": "graph_gl", "shape": weights.shape, "tau": tau,
              "gamma": gamma, "c": c})


def segment(x, shape=None):
    """Binary segmentation ``x > 0``."""
    s = np.asarray(x) > 0
    return s.reshape(shape) if shape is not None else s


def dice(seg, truth):
    """``2 |X & Y| / (|X| + |Y|)``; 1 when both masks are empty."""
    seg = np.asarray(seg, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if seg.shape != truth.shape:
        raise ValueError("mask shapes differ")
    total = int(seg.sum()) + int(truth.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(seg, truth).sum()) / total


def random_priors(truth, fraction=0.05, seed=0):
    """Reveal the true label on a random `fraction` of the pixels."""
    truth = np.asarray(truth, dtype=bool).ravel()
    rng = np.random.default_rng(seed)
    n = truth.size
    pick = rng.choice(n, size=max(1, int(round(fraction * n))), replace=False)
    lam = np.zeros(n)
    lam[pick] = 1.0
    y = np.zeros(n)
    y[pick] = np.where(truth[pick], 1.0, -1.0)
    return PriorLabels(lam, y)


def synthetic_two_phase(size=64, noise=0.05, prior_fraction=0.05, seed=0,
                        radius=0.3, low=0.3, high=0.7):
    """Two-phase test image: a centred disk on a flat background.

    Parameters
    ----------
    radius : float
        Disk radius as a fraction of `size`.

    Returns
    -------
    image : ndarray, shape (size, size)
    truth : ndarray of bool
    prior : PriorLabels
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    truth = (yy - 0.5) ** 2 + (xx - 0.5) ** 2 < radius ** 2
    image = np.where(truth, high, low) + noise * rng.standard_normal(truth.shape)
    image = np.clip(image, 0.0, 1.0)
    prior = random_priors(truth, prior_fraction, seed=rng.integers(2 ** 31))
    return image, truth, prior
