import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hmmdwr.systems import SlowFastSystem, make_benchmark

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

TWO_PI = 2.0 * math.pi


def scalar_system(f, fy, fu, g, gy, gu, epsilon=1e-3, T=100.0, y0=0.0, c=1, d=1, name="test"):
    """Small system built from plain Python callables (runs the uncompiled kernels)."""
    return SlowFastSystem(
        c=c, d=d, epsilon=epsilon, T=T, y0=np.atleast_1d(np.asarray(y0, dtype=float)),
        f=f, grad_y_f=fy, grad_u_f=fu, g=g, grad_y_g=gy, grad_u_g=gu, name=name,
    )


def one(*_):
    return np.ones(1)


def zero_vec(*_):
    return np.zeros(1)


def zero_mat(*_):
    return np.zeros((1, 1))


def eye_mat(*_):
    return np.ones((1, 1))


def forced_decay():
    """u' = -u + sin(2 pi t) with f = u."""
    return scalar_system(
        f=lambda y, u: u.copy(), fy=zero_mat, fu=eye_mat,
        g=lambda t, y, u: -u + math.sin(TWO_PI * t), gy=zero_mat, gu=lambda t, y, u: -np.ones((1, 1)),
    )


def relaxation_to_y():
    """u' = -(u - y) with f = u: the orbit is u = Y, the adjoint is 1."""
    return scalar_system(
        f=lambda y, u: u.copy(), fy=zero_mat, fu=eye_mat,
        g=lambda t, y, u: -(u - y), gy=eye_mat, gu=lambda t, y, u: -np.ones((1, 1)),
    )


def separable(epsilon=1e-3, T=100.0):
    """u-independent f = 1/(1+y); the fast part is a damped forced scalar."""
    return scalar_system(
        f=lambda y, u: 1.0 / (1.0 + y), fy=lambda y, u: (-1.0 / (1.0 + y) ** 2).reshape(1, 1),
        fu=zero_mat,
        g=lambda t, y, u: -u + math.sin(TWO_PI * t), gy=zero_mat, gu=lambda t, y, u: -np.ones((1, 1)),
        epsilon=epsilon, T=T,
    )


def nonlinear_coupled(epsilon=2e-3, T=200.0):
    """Coupled scalar test: f = 1/((1+y)(1+u^2)), u' = -(1+y) u - u^3/3 + sin(2 pi t)."""

    def f(y, u):
        return 1.0 / ((1.0 + y) * (1.0 + u * u))

    def fy(y, u):
        return (-1.0 / ((1.0 + y) ** 2 * (1.0 + u * u))).reshape(1, 1)

    def fu(y, u):
        return (-2.0 * u / ((1.0 + y) * (1.0 + u * u) ** 2)).reshape(1, 1)

    def g(t, y, u):
        return -(1.0 + y) * u - u**3 / 3.0 + math.sin(TWO_PI * t)

    def gy(t, y, u):
        return (-u).reshape(1, 1)

    def gu(t, y, u):
        return (-(1.0 + y) - u * u).reshape(1, 1)

    return scalar_system(f, fy, fu, g, gy, gu, epsilon=epsilon, T=T)


@pytest.fixture(scope="session")
def osc1():
    return make_benchmark("osc1")


@pytest.fixture(scope="session")
def osc2():
    return make_benchmark("osc2")
