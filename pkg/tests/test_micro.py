import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hmmdwr.discretization import MicroGrid, gauss_points
from hmmdwr.exceptions import DegenerateMonodromyError, NonConvergenceError, UsageError
from hmmdwr.micro import (
    eta_pi,
    solve_micro_adjoint,
    solve_periodic,
    solve_tangent,
    transfer,
    transfer_grad_full,
    transfer_grad_partial,
    write_orbit_csv,
)
from hmmdwr.systems import make_benchmark

from conftest import TWO_PI, forced_decay, nonlinear_coupled, relaxation_to_y, scalar_system, zero_mat

TIGHT = 1e-13


def _harmonic(t):
    return (np.sin(TWO_PI * t) - TWO_PI * np.cos(TWO_PI * t)) / (1.0 + TWO_PI**2)


def test_forced_decay_orbit_second_order():
    errs = []
    for M in (20, 40, 80):
        orb = solve_periodic(forced_decay(), 0.0, MicroGrid(M), tol_p=TIGHT)
        errs.append(np.abs(orb.values[:, 0] - _harmonic(orb.grid.nodes)).max())
        assert orb.defect < TIGHT
    assert math.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.1)
    assert math.log2(errs[1] / errs[2]) == pytest.approx(2.0, abs=0.1)


def test_forced_decay_transfer_vanishes():
    orb = solve_periodic(forced_decay(), 0.0, MicroGrid(20), tol_p=TIGHT)
    assert abs(transfer(forced_decay(), 0.0, orb)[0]) < 1e-12


@given(Y=st.floats(-2.0, 2.0))
def test_relaxation_orbit_is_the_slow_state(Y):
    sys = relaxation_to_y()
    orb = solve_periodic(sys, Y, MicroGrid(10), tol_p=TIGHT, max_cycles=200, warm_start=[Y])
    assert np.abs(orb.values - Y).max() < 1e-12
    assert transfer(sys, Y, orb)[0] == pytest.approx(Y, abs=1e-12)
    assert transfer_grad_partial(sys, Y, orb)[0, 0] == 0.0
    assert transfer_grad_full(sys, Y, orb)[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_cycling_reports_stall():
    grow = scalar_system(zero_mat, zero_mat, zero_mat, lambda t, y, u: 0.5 * u + math.sin(TWO_PI * t),
                         zero_mat, lambda t, y, u: 0.5 * np.ones((1, 1)))
    with pytest.raises(NonConvergenceError) as info:
        solve_periodic(grow, 0.0, MicroGrid(10), max_cycles=5)
    assert info.value.cycles == 5 and info.value.defect > 1e-9


def test_undamped_monodromy_is_rejected():
    flat = scalar_system(lambda y, u: u.copy(), zero_mat, lambda y, u: np.ones((1, 1)),
                         lambda t, y, u: np.zeros(1), zero_mat, zero_mat)
    orb = solve_periodic(flat, 0.0, MicroGrid(10))
    with pytest.raises(DegenerateMonodromyError):
        solve_tangent(flat, 0.0, orb)
    with pytest.raises(DegenerateMonodromyError):
        solve_micro_adjoint(flat, 0.0, orb)


def test_anchor_mismatch():
    sys = forced_decay()
    orb = solve_periodic(sys, 0.0, MicroGrid(10))
    with pytest.raises(UsageError):
        transfer(sys, 1.0, orb)


@pytest.mark.parametrize("problem", ["osc1", "osc2"])
def test_benchmark_cycling_converges(problem):
    sys = make_benchmark(problem)
    for Y in (0.0, 0.5, 1.0, 1.2):
        orb = solve_periodic(sys, Y, MicroGrid.from_step(0.05))
        assert orb.defect <= 1e-9 and orb.cycles_used <= 200
        assert orb.defect_history[orb.cycles_used - 1] == orb.defect


def _orbit(sys, Y, M):
    return solve_periodic(sys, Y, MicroGrid(M), tol_p=TIGHT, max_cycles=2000)


def _central(sys, Y, M, delta):
    plus, minus = _orbit(sys, Y + delta, M), _orbit(sys, Y - delta, M)
    dU = (plus.values - minus.values) / (2 * delta)
    dF = (transfer(sys, Y + delta, plus) - transfer(sys, Y - delta, minus))[0] / (2 * delta)
    return dU, dF


@given(Y=st.floats(0.0, 1.2))
def test_tangent_matches_central_differences(Y):
    sys = make_benchmark("osc1")
    M = 20
    orb = _orbit(sys, Y, M)
    tan = solve_tangent(sys, Y, orb)
    dU, dF = _central(sys, Y, M, 1e-4)
    assert np.abs(tan.values[..., 0] - dU).max() <= 1e-5 * np.abs(dU).max()
    full = transfer_grad_full(sys, Y, orb, tan)[0, 0]
    assert abs(full - dF) <= 1e-5 * abs(dF)


@given(Y=st.floats(0.0, 1.2))
def test_tangent_steep_fast_coefficient(Y):
    # the tanh stiffness makes the plain difference quotient's delta^2 term
    # visible at delta = 1e-4; it must shrink by 100 per decade
    sys = make_benchmark("osc2")
    M = 20
    orb = _orbit(sys, Y, M)
    tan = solve_tangent(sys, Y, orb)
    full = transfer_grad_full(sys, Y, orb, tan)[0, 0]
    dU1, dF1 = _central(sys, Y, M, 1e-4)
    dU2, dF2 = _central(sys, Y, M, 0.5e-4)
    assert np.abs(tan.values[..., 0] - dU1).max() <= 1e-5 * np.abs(dU1).max()
    e1, e2 = full - dF1, full - dF2
    if abs(e1) > 1e-7 * abs(dF1):
        assert e1 / e2 == pytest.approx(4.0, rel=0.05)
    rich = (4 * dF2 - dF1) / 3
    assert abs(full - rich) <= 1e-5 * abs(rich)


@given(Y=st.floats(0.0, 1.0))
def test_tangent_on_nonlinear_scalar(Y):
    sys = nonlinear_coupled()
    delta, M = 1e-4, 16
    orb = _orbit(sys, Y, M)
    full = transfer_grad_full(sys, Y, orb)[0, 0]
    fd_F = (transfer(sys, Y + delta, _orbit(sys, Y + delta, M))
            - transfer(sys, Y - delta, _orbit(sys, Y - delta, M)))[0] / (2 * delta)
    assert abs(full - fd_F) <= 1e-5 * abs(fd_F)


def _perturbed(base, alpha, a, b):
    def g(t, y, u):
        return base.g(t, y, u) + alpha * (a * math.sin(TWO_PI * t) + b * math.cos(TWO_PI * t))
    return scalar_system(base.f, base.grad_y_f, base.grad_u_f, g, base.grad_y_g, base.grad_u_g,
                         epsilon=base.epsilon, T=base.T)


@given(a=st.floats(-1, 1), b=st.floats(-1, 1), Y=st.floats(0.0, 1.0))
def test_micro_adjoint_duality(a, b, Y):
    base = nonlinear_coupled()
    M = 16
    grid = MicroGrid(M)
    orb = _orbit(base, Y, M)
    z = solve_micro_adjoint(base, Y, orb).values[:, 0, 0]
    chi = gauss_points(grid.nodes)
    h = a * np.sin(TWO_PI * chi) + b * np.cos(TWO_PI * chi)
    pairing = float(np.sum(z * 0.5 * grid.k * h.sum(axis=1)))
    F0 = transfer(base, Y, orb)[0]

    def defect(alpha):
        sys = _perturbed(base, alpha, a, b)
        return transfer(sys, Y, _orbit(sys, Y, M))[0] - F0 - alpha * pairing

    e1, e2 = defect(0.1), defect(0.05)
    size = a * a + b * b
    assert abs(e1) <= 0.1 * size * 0.01 + 1e-12
    # quadratic in the perturbation size
    if abs(e1) > 1e-10:
        assert e1 / e2 == pytest.approx(4.0, rel=0.15)


def _fine_minus_coarse(sys, Y, M):
    return transfer(sys, Y, _orbit(sys, Y, 16 * M))[0] - transfer(sys, Y, _orbit(sys, Y, M))[0]


@pytest.mark.parametrize("Y", [0.0, 0.5])
def test_eta_pi_effectivity_improves(Y):
    sys = make_benchmark("osc1")
    ratios = []
    for M in (10, 20, 80):
        est, det = eta_pi(sys, Y, orbit=_orbit(sys, Y, M))
        ratios.append(est[0] / _fine_minus_coarse(sys, Y, M))
        assert det.periodicity_defect < TIGHT
        assert est[0] == pytest.approx(0.5 * (det.primal_residual[0] + det.adjoint_residual[0]))
    assert abs(ratios[-1] - 1.0) < 0.02
    assert abs(ratios[-1] - 1.0) < abs(ratios[0] - 1.0)


def test_eta_pi_needs_grid_or_orbit():
    with pytest.raises(UsageError):
        eta_pi(forced_decay(), 0.0)


def test_orbit_csv(tmp_path):
    orb = solve_periodic(make_benchmark("osc1"), 0.3, MicroGrid(10))
    path = tmp_path / "orbit.csv"
    write_orbit_csv(orb, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 12 and lines[0].startswith("s,")
