import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hmmdwr.exceptions import ConfigurationError
from hmmdwr.systems import (
    RESOLVED_EPSILON,
    STATED_EPSILON,
    GoalFunctional,
    check_assumptions,
    make_benchmark,
)

from conftest import scalar_system, zero_mat, zero_vec


def test_forcing_only_at_quarter_period(osc1):
    g = osc1.g(0.25, np.zeros(1), np.zeros(2))
    np.testing.assert_allclose(g, [0.0, 1.0], atol=1e-15)


def test_gamma_at_zero(osc1):
    # g2 = -gamma(y) u1 for u = (1, 0) outside the forcing zero
    g = osc1.g(0.0, np.zeros(1), np.array([1.0, 0.0]))
    assert g[1] == pytest.approx(-(4 * math.pi**2 - 32.0))
    assert 4 * math.pi**2 - 32.0 == pytest.approx(7.4784, abs=1e-4)


@pytest.mark.parametrize("y", [0.0, 0.3, 1.0, 1.2])
def test_three_fifths_eigenvalues(y):
    sys = make_benchmark("osc1", "three_fifths")
    lam = np.sort_complex(np.linalg.eigvals(sys.grad_u_g(0.1, np.array([y]), np.zeros(2))))
    gamma = 4 * math.pi**2 + 32 * (y - 1)
    root = np.sqrt(complex(9 - 100 * gamma)) / 10
    expected = np.sort_complex(np.array([-0.3 + root, -0.3 - root]))
    np.testing.assert_allclose(lam, expected, atol=1e-12)


def test_assumption_report_three_fifths():
    sys = make_benchmark("osc1", "three_fifths")
    ys = np.linspace(0.0, 1.2, 7)
    us = [np.array([a, b]) for a in (-1.0, 0.0, 0.7) for b in (-2.0, 0.5)]
    rep = check_assumptions(sys, ys, us)
    assert rep.max_real_eig == pytest.approx(-0.3, abs=1e-12)
    assert rep.max_f_norm <= 1.0
    assert rep.ok


def test_assumption_report_linear_decay():
    sys = scalar_system(zero_vec, zero_mat, zero_mat, lambda t, y, u: -u, zero_mat,
                        lambda t, y, u: -np.ones((1, 1)))
    rep = check_assumptions(sys, [0.0, 1.0, 2.0], [-1.0, 0.0, 3.0])
    assert rep.lipschitz_y == 0.0 and rep.lipschitz_u == 0.0
    assert rep.max_real_eig == -1.0
    assert rep.ok


def test_assumption_report_flags_growth_and_aperiodicity():
    sys = scalar_system(zero_vec, zero_mat, zero_mat, lambda t, y, u: u + t, zero_mat,
                        lambda t, y, u: np.ones((1, 1)))
    rep = check_assumptions(sys, [0.0], [0.0, 1.0])
    assert not rep.ok
    assert len(rep.violations) == 2


def test_unknown_problem_and_variant():
    with pytest.raises(ConfigurationError):
        make_benchmark("osc3")
    with pytest.raises(ConfigurationError):
        make_benchmark("osc1", "quarter")
    with pytest.raises(ConfigurationError):
        make_benchmark("osc1", parameters="guessed")


def test_parameter_sets():
    res = make_benchmark("osc1")
    assert res.epsilon == RESOLVED_EPSILON and res.name.startswith("osc1-three_fifths")
    stated = make_benchmark("osc1", parameters="stated")
    assert stated.epsilon == STATED_EPSILON and stated.name.startswith("osc1-half")
    assert (stated.T, stated.c, stated.d) == (6.0e5, 1, 2)
    # the damping flag is ignored for osc2
    assert make_benchmark("osc2", "three_fifths").name.startswith("osc2-half")
    assert make_benchmark("osc2").T == 1.0e6
    assert make_benchmark("osc1", "half", 1e-6).origin == ("osc1", "half", 1e-6)


def test_stated_parameters_bound_terminal_value():
    # y' <= eps / (1 + y) integrates to (1+y)^2 <= 1 + 2 eps T
    sys = make_benchmark("osc1", parameters="stated")
    bound = math.sqrt(1.0 + 2.0 * sys.epsilon * sys.T) - 1.0
    assert bound < 0.49 < 1.08704164


def test_rebuild_and_replace(osc1):
    copy = osc1.rebuild()
    assert copy.epsilon == osc1.epsilon and copy.name == osc1.name
    assert osc1.replace(epsilon=1e-6).origin[2] == 1e-6
    assert osc1.replace(T=10.0).origin is None


def test_y0_is_read_only(osc1):
    with pytest.raises(ValueError):
        osc1.y0[0] = 1.0


def test_goal_functional():
    goal = GoalFunctional(1)
    vals = np.arange(6.0).reshape(3, 2)
    assert goal(vals) == 5.0
    np.testing.assert_array_equal(goal.terminal_derivative(2), [0.0, 1.0])


def _fd(fun, x, h):
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((fun(x + e) - fun(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


@pytest.mark.parametrize("problem", ["osc1", "osc2"])
@given(
    t=st.floats(0.0, 1.0),
    y=st.floats(0.0, 1.2),
    u1=st.floats(-0.3, 0.3),
    u2=st.floats(-2.0, 2.0),
)
def test_gradients_match_central_differences(problem, t, y, u1, u2):
    sys = make_benchmark(problem)
    Y, U = np.array([y]), np.array([u1, u2])
    h = 1e-5
    pairs = [
        (sys.grad_y_f(Y, U), _fd(lambda v: sys.f(v, U), Y, h)),
        (sys.grad_u_f(Y, U), _fd(lambda v: sys.f(Y, v), U, h)),
        (sys.grad_y_g(t, Y, U), _fd(lambda v: sys.g(t, v, U), Y, h)),
        (sys.grad_u_g(t, Y, U), _fd(lambda v: sys.g(t, Y, v), U, h)),
    ]
    for exact, approx in pairs:
        scale = max(1.0, np.abs(exact).max())
        assert np.abs(exact - approx).max() <= 1e-6 * scale


@pytest.mark.parametrize("problem", ["osc1", "osc2"])
@given(t=st.floats(-3.0, 3.0), y=st.floats(0.0, 1.2), u1=st.floats(-1, 1), u2=st.floats(-1, 1))
def test_fast_rhs_is_one_periodic(problem, t, y, u1, u2):
    sys = make_benchmark(problem)
    Y, U = np.array([y]), np.array([u1, u2])
    a, b = sys.g(t, Y, U), sys.g(t + 1.0, Y, U)
    assert np.linalg.norm(a - b) <= 1e-14 * (1 + np.linalg.norm(a)) + 1e-14


@given(y=st.floats(0.0, 10.0), u1=st.floats(-100, 100))
def test_osc1_slow_rhs_in_unit_interval(y, u1):
    sys = make_benchmark("osc1")
    val = sys.f(np.array([y]), np.array([u1, 0.0]))[0]
    assert 0.0 < val <= 1.0
