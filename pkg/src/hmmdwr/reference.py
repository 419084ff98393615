"""Resolved reference solutions of the coupled slow/fast system.

The full system is integrated with the trapezoidal rule at a step ``k`` that
divides the unit forcing period, over the whole horizon ``[0, T]``.  Goal
values at ``k, k/2, k/4`` are Richardson-extrapolated.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import time

import numpy as np

from . import _kernels
from .exceptions import NonConvergenceError, UsageError

__all__ = [
    "DEFAULT_STEPS",
    "ResolvedRun",
    "Extrapolation",
    "initial_fast_state",
    "solve_resolved",
    "extrapolate",
    "reference_value",
    "write_reference_csv",
]

DEFAULT_STEPS = (0.01, 0.005, 0.0025)
STABILITY_TOL = 1e-6


@dataclasses.dataclass(frozen=True)
class ResolvedRun:
    k: float
    steps: int
    y: np.ndarray
    u: np.ndarray
    J: float
    wall_clock: float
    max_fast_norm: float
    worst_newton: float


@dataclasses.dataclass(frozen=True)
class Extrapolation:
    order: float
    limit: float
    reliable: bool
    values: tuple
    # gap between the order-2 Richardson values of (k, k/2) and (k/2, k/4)
    spread: float = math.nan

    @property
    def stable(self) -> bool:
        return self.spread <= STABILITY_TOL


def _steps_per_period(k: float) -> int:
    P = int(round(1.0 / k))
    if P < 1 or abs(P * k - 1.0) > 1e-12:
        raise UsageError(f"step {k} must divide the unit forcing period")
    return P


def initial_fast_state(system, k: float, tol: float = 1e-13, max_cycles: int = 10_000) -> np.ndarray:
    """Periodic fast state at ``y0`` for the trapezoidal rule with step ``k``.

    The fast equation is cycled with the slow variable frozen (``eps = 0``).
    """
    P = _steps_per_period(k)
    kern = _kernels.kernels_for(system)
    u = np.zeros(system.d)
    for _ in range(max_cycles):
        _, u_new, _, _ = kern["resolved"](*system.rhs, 0.0, system.y0.copy(), u, P, P, 1e-14, 25)
        if np.linalg.norm(u_new - u) < tol:
            return u_new
        u = u_new
    raise NonConvergenceError("fast state at y0 did not become periodic", defect=float(np.linalg.norm(u_new - u)))


def solve_resolved(system, k: float, u0=None, newton_tol: float = 1e-14, max_newton: int = 25) -> ResolvedRun:
    """Trapezoidal rule for ``(y, u)`` with step ``k`` on ``[0, T]``."""
    P = _steps_per_period(k)
    nsteps = int(round(system.T / k))
    if abs(nsteps * k - system.T) > k:
        raise UsageError("step does not divide the horizon")
    if u0 is None:
        u0 = initial_fast_state(system, k)
    u0 = np.asarray(u0, dtype=float).reshape(system.d)
    kern = _kernels.kernels_for(system)
    start = time.perf_counter()
    y, u, umax, worst = kern["resolved"](
        *system.rhs, system.epsilon, system.y0.copy(), u0.copy(), P, nsteps, newton_tol, max_newton
    )
    wall = time.perf_counter() - start
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(u))):
        raise NonConvergenceError(f"resolved run with k={k} blew up")
    if worst > 1e-8:
        raise NonConvergenceError(f"trapezoidal Newton stalled (correction {worst:.3e})")
    return ResolvedRun(k, nsteps, np.asarray(y), np.asarray(u), float(y[0]), wall, float(umax), float(worst))


def extrapolate(values) -> Extrapolation:
    """Order and Richardson limit from goal values at ``k, k/2, k/4``."""
    j1, j2, j3 = (float(v) for v in values)
    d1, d2 = j1 - j2, j2 - j3
    spread = abs((j2 - d1 / 3.0) - (j3 - d2 / 3.0))
    if d2 == 0.0 or d1 / d2 <= 0.0:
        return Extrapolation(math.nan, j3, False, (j1, j2, j3), spread)
    p = math.log2(d1 / d2)
    limit = j3 - d2 / (2.0**p - 1.0)
    return Extrapolation(p, limit, True, (j1, j2, j3), spread)


def reference_value(system, steps=DEFAULT_STEPS):
    """Run the resolved solver on ``steps`` and extrapolate; returns ``(runs, extrapolation)``."""
    if len(steps) != 3:
        raise UsageError("need exactly three step sizes")
    runs = [solve_resolved(system, k) for k in steps]
    return runs, extrapolate([r.J for r in runs])


def write_reference_csv(runs, extrap: Extrapolation, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "J", "p", "limit"])
        for r in runs:
            w.writerow([repr(r.k), repr(r.J), repr(extrap.order), repr(extrap.limit)])
