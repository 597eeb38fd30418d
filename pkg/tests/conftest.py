"""Shared fixtures and small hand-built problems."""

import numpy as np
import pytest

from precdca.model import DcProblem, SparseSymOperator
from precdca.scad import ScadParams, build_scad_problem, synthetic_instance


def soft_threshold_1d(mu=0.5, center=1.0):
    """``E = 1/2 (x - center)^2 + mu |x|``; minimizer ``shrink(center, mu)``."""
    def f(x):
        return 0.5 * float((x[0] - center) ** 2)

    def grad_f(x):
        return x - center

    def g1(x):
        return mu * float(abs(x[0]))

    def sub(x, query=None):
        g = np.sign(x)
        if query is not None:
            g = np.where(x == 0, np.sign(query), g)
        return mu * g

    def prox(v, t):
        return np.sign(v) * np.maximum(np.abs(v) - mu * np.asarray(t), 0.0)

    return DcProblem(dim=1, f=f, grad_f=grad_f, g1=g1, subgrad_g1=sub,
                     L=1.0, prox_g1=prox,
                     hess_f=SparseSymOperator(np.eye(1)), sigma=1.0,
                     l1_weight=mu, name="soft-threshold")


def double_well_1d(tau=1.0, c=2.0):
    """``E = 1/4 (x^2 - 1)^2 / tau`` split as in the GL model."""
    def g1(x):
        return 0.5 * c / tau * float(x @ x)

    def g1_grad(x, query=None):
        return c / tau * x

    def g2(x):
        return (0.5 * c * float(x @ x) - 0.25 * float(np.sum((x * x - 1) ** 2))) / tau

    def g2_grad(x):
        return ((c + 1.0) * x - x ** 3) / tau

    return DcProblem(dim=1, g1=g1, subgrad_g1=g1_grad, g2=g2,
                     subgrad_g2=g2_grad, L=0.0,
                     hess_f=SparseSymOperator(np.zeros((1, 1))),
                     hess_g1=SparseSymOperator(np.eye(1) * c / tau),
                     mu=c / tau, g1_smooth=True, name="double-well")


@pytest.fixture(scope="session")
def small_scad():
    data = synthetic_instance(40, 100, 8, seed=3)
    return data, build_scad_problem(data, ScadParams())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
