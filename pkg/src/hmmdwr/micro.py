"""Periodic-in-time micro problems for a frozen slow state.

For fixed ``Y`` the fast equation ``u' = g(s, Y, u)`` is discretised with
continuous piecewise linear trial and piecewise constant test functions on a
uniform grid of ``[0, 1]``, integrals by the two-point Gauss rule.  The
primal orbit is found by cycling (integrate one period, restart from the end
state) until ``|u(1) - u(0)| < tol_p``.  Tangent and adjoint problems are
linear and are solved exactly by shooting through the monodromy map.
"""

from __future__ import annotations

import csv
import dataclasses
from typing import Optional

import numpy as np

from . import _kernels
from .discretization import GAUSS_THETA, MicroGrid, linear_weight_at_gauss, quadratic_weight_at_gauss
from .exceptions import DegenerateMonodromyError, NonConvergenceError, UsageError

__all__ = [
    "MicroTolerances",
    "PeriodicOrbit",
    "TangentOrbit",
    "MicroAdjoint",
    "EtaPiDetail",
    "solve_periodic",
    "transfer",
    "transfer_grad_partial",
    "solve_tangent",
    "transfer_grad_full",
    "solve_micro_adjoint",
    "eta_pi",
    "write_orbit_csv",
]

_COND_LIMIT = 1e12


@dataclasses.dataclass(frozen=True)
class MicroTolerances:
    tol_p: float = 1e-9
    max_cycles: int = 200
    step_tol: float = 1e-14
    step_maxit: int = 25


@dataclasses.dataclass(eq=False)
class PeriodicOrbit:
    anchor: np.ndarray
    grid: MicroGrid
    values: np.ndarray
    defect: float
    cycles_used: int
    defect_history: np.ndarray = dataclasses.field(default=None, repr=False)
    _gauss: Optional[tuple] = dataclasses.field(default=None, repr=False)

    def __call__(self, s):
        s = np.asarray(s, dtype=float) % 1.0
        return np.stack([np.interp(s, self.grid.nodes, v) for v in self.values.T], axis=-1)

    @property
    def end_state(self) -> np.ndarray:
        return self.values[-1].copy()


@dataclasses.dataclass(eq=False)
class TangentOrbit:
    anchor: np.ndarray
    grid: MicroGrid
    values: np.ndarray  # (M+1, d, c)
    monodromy: np.ndarray = dataclasses.field(repr=False, default=None)

    def at_gauss(self) -> np.ndarray:
        v = self.values
        th = GAUSS_THETA[None, :, None, None]
        return (1.0 - th) * v[:-1, None] + th * v[1:, None]


@dataclasses.dataclass(eq=False)
class MicroAdjoint:
    anchor: np.ndarray
    grid: MicroGrid
    values: np.ndarray  # (M, d, c), piecewise constant


@dataclasses.dataclass(frozen=True)
class EtaPiDetail:
    primal_residual: np.ndarray
    adjoint_residual: np.ndarray
    periodicity_defect: float
    cycles_used: int


def _as_state(Y, c) -> np.ndarray:
    Y = np.array(Y, dtype=float).reshape(-1)
    if Y.shape != (c,):
        raise UsageError(f"slow state must have length {c}")
    return Y


def _check_anchor(Y, orbit):
    if not np.array_equal(np.asarray(Y, dtype=float).reshape(-1), orbit.anchor):
        raise UsageError("orbit is anchored at a different slow state")


def solve_periodic(system, Y, grid: MicroGrid, tol_p: float = 1e-9, max_cycles: int = 200,
                   warm_start=None, tols: MicroTolerances | None = None) -> PeriodicOrbit:
    """Cycle the micro problem into its periodic state.

    Starts from ``warm_start`` (a fast state) or zero.  Raises
    :class:`NonConvergenceError` carrying the last defect when ``max_cycles``
    periods do not reach ``tol_p``.
    """
    tols = tols or MicroTolerances(tol_p=tol_p, max_cycles=max_cycles)
    if tol_p <= 0:
        raise ValueError("tol_p must be positive")
    Y = _as_state(Y, system.c)
    u0 = np.zeros(system.d) if warm_start is None else np.array(warm_start, dtype=float).reshape(system.d)
    kern = _kernels.kernels_for(system)
    U, defect, cycles, history, _ = kern["cycle"](
        system.g, system.grad_u_g, Y, grid.M, u0, tol_p, max_cycles, tols.step_tol, tols.step_maxit
    )
    defect = float(defect)
    if not defect < tol_p:
        raise NonConvergenceError(
            f"periodic cycling stalled at defect {defect:.3e} after {cycles} cycles (Y={Y})",
            defect=defect, cycles=int(cycles),
        )
    Y.setflags(write=False)
    return PeriodicOrbit(Y, grid, np.asarray(U), defect, int(cycles), np.asarray(history))


def _gauss_data(system, orbit: PeriodicOrbit):
    if orbit._gauss is None:
        kern = _kernels.kernels_for(system)
        orbit._gauss = tuple(
            np.asarray(a) for a in kern["gauss_eval"](*system.rhs, orbit.anchor, orbit.values)
        )
    return orbit._gauss


def transfer(system, Y, orbit: PeriodicOrbit) -> np.ndarray:
    """Period average of ``f(Y, u(s))`` by the summed Gauss rule."""
    _check_anchor(Y, orbit)
    fq = _gauss_data(system, orbit)[0]
    return 0.5 * orbit.grid.k * fq.sum(axis=(0, 1))


def transfer_grad_partial(system, Y, orbit: PeriodicOrbit) -> np.ndarray:
    """``int grad_y f ds`` only; the orbit's own Y-dependence is ignored."""
    _check_anchor(Y, orbit)
    fyq = _gauss_data(system, orbit)[1]
    return 0.5 * orbit.grid.k * fyq.sum(axis=(0, 1))


def _monodromy_check(phi, what):
    cond = np.linalg.cond(np.eye(phi.shape[0]) - phi)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise DegenerateMonodromyError(
            f"I - monodromy of the {what} problem is singular (cond {cond:.3e}); "
            "fast dynamics are not damped"
        )


def _sweep(kernel, *args, what):
    # an exactly singular I - monodromy divides by zero inside the kernel
    try:
        return kernel(*args)
    except ZeroDivisionError:
        raise DegenerateMonodromyError(
            f"I - monodromy of the {what} problem is singular; fast dynamics are not damped"
        ) from None


def solve_tangent(system, Y, orbit: PeriodicOrbit) -> TangentOrbit:
    """Sensitivity ``D_Y u`` of the discrete periodic orbit."""
    _check_anchor(Y, orbit)
    _, _, _, _, gyq, guq = _gauss_data(system, orbit)
    D, phi = _sweep(_kernels.tangent_sweep, guq, gyq, orbit.grid.k, what="tangent")
    _monodromy_check(phi, "tangent")
    return TangentOrbit(orbit.anchor, orbit.grid, D, phi)


def transfer_grad_full(system, Y, orbit: PeriodicOrbit, tangent: TangentOrbit | None = None) -> np.ndarray:
    """Full derivative ``int grad_y f + grad_u f . D_Y u ds``."""
    _check_anchor(Y, orbit)
    if tangent is None:
        tangent = solve_tangent(system, Y, orbit)
    elif not np.array_equal(tangent.anchor, orbit.anchor):
        raise UsageError("tangent anchored at a different slow state")
    _, fyq, fuq, _, _, _ = _gauss_data(system, orbit)
    Dq = tangent.at_gauss()
    integrand = fyq + np.einsum("mqcd,mqde->mqce", fuq, Dq)
    return 0.5 * orbit.grid.k * integrand.sum(axis=(0, 1))


def solve_micro_adjoint(system, Y, orbit: PeriodicOrbit) -> MicroAdjoint:
    """Periodic adjoint with right-hand side ``J^pi'(u) = int grad_u f . phi ds``."""
    _check_anchor(Y, orbit)
    _, _, fuq, _, _, guq = _gauss_data(system, orbit)
    z, psi = _sweep(_kernels.adjoint_sweep, guq, fuq, orbit.grid.k, what="adjoint")
    _monodromy_check(psi, "adjoint")
    return MicroAdjoint(orbit.anchor, orbit.grid, z)


def eta_pi(system, Y, grid: MicroGrid | None = None, orbit: PeriodicOrbit | None = None,
           adjoint: MicroAdjoint | None = None, tol_p: float = 1e-9, max_cycles: int = 200,
           warm_start=None):
    """Estimate ``F(Y) - F_k(Y)`` per slow component.

    ``(1/2) rho(u_k)(z~ - z_k) + (1/2) rho*(z_k)(u~ - u_k)`` with ``u~``, ``z~``
    the quadratic / linear reconstructions on micro patches.  The periodicity
    defect is only reported in the detail record.
    """
    Y = _as_state(Y, system.c)
    if orbit is None:
        if grid is None:
            raise UsageError("need a grid or a precomputed orbit")
        orbit = solve_periodic(system, Y, grid, tol_p=tol_p, max_cycles=max_cycles, warm_start=warm_start)
    _check_anchor(Y, orbit)
    if adjoint is None:
        adjoint = solve_micro_adjoint(system, Y, orbit)
    _, _, fuq, gq, _, guq = _gauss_data(system, orbit)
    k = orbit.grid.k
    nodes = orbit.grid.nodes
    U = orbit.values
    z = adjoint.values

    # strong residual u' - g at the Gauss points, (M, 2, d)
    res = (np.diff(U, axis=0) / k)[:, None, :] - gq
    zw = linear_weight_at_gauss(nodes, z)  # (M, 2, d, c)
    primal = -0.5 * k * np.einsum("mqd,mqdc->c", res, zw)

    uw = quadratic_weight_at_gauss(nodes, U)  # (M, 2, d); vanishes at nodes
    j_prime = 0.5 * k * np.einsum("mqcd,mqd->c", fuq, uw)
    # B'(u)(w, z) = int (w' - gu w) . z; the w' part integrates to zero
    b_prime = -0.5 * k * np.einsum("mdc,mqde,mqe->c", z, guq, uw)
    adjoint_part = j_prime - b_prime

    value = 0.5 * primal + 0.5 * adjoint_part
    detail = EtaPiDetail(primal, adjoint_part, orbit.defect, orbit.cycles_used)
    return value, detail


def write_orbit_csv(orbit: PeriodicOrbit, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["s"] + [f"u{i + 1}" for i in range(orbit.values.shape[1])])
        for s, row in zip(orbit.grid.nodes, orbit.values):
            w.writerow([repr(float(s))] + [repr(float(x)) for x in row])
