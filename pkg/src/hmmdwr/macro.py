"""Macro time stepping of the averaged slow equation.

On every macro interval the slow trial function is linear and tested with
constants, so each step solves::

    Y_n - Y_{n-1} - eps * K_n / 2 * (F_k(Y(chi_1)) + F_k(Y(chi_2))) = 0

with ``Y(chi_q)`` the linear interpolant at the two Gauss points.  Every
residual evaluation needs two periodic micro solves.  Newton uses the
approximate Jacobian that ignores the orbit's dependence on ``Y``.  Where
that Jacobian is too far off for the iteration to contract (close to a fast
resonance the neglected term dominates) the step switches to the Jacobian
with the tangent term; the solved equation is the same either way.
"""

from __future__ import annotations

import csv
import dataclasses
import logging

import numpy as np

from .discretization import GAUSS_THETA, MacroMesh, PiecewiseLinearFn
from .exceptions import HMMError, StepError
from .micro import MicroTolerances, solve_periodic, transfer, transfer_grad_full, transfer_grad_partial

__all__ = [
    "SolverTolerances",
    "StepRecord",
    "MacroSolution",
    "macro_step",
    "solve_macro",
    "galerkin_residuals",
    "write_trajectory_csv",
]

log = logging.getLogger(__name__)

_TOL_P_MIN = 1e-13


@dataclasses.dataclass(frozen=True)
class SolverTolerances:
    tol_p: float = 1e-9
    max_cycles: int = 200
    newton_tol: float = 1e-12
    # residuals carry O(tol_p) noise from the orbits; below this level a
    # Newton step that no longer halves the residual counts as converged
    newton_floor: float = 1e-9
    max_newton: int = 20
    step_tol: float = 1e-14
    step_maxit: int = 25

    @property
    def micro(self) -> MicroTolerances:
        return MicroTolerances(self.tol_p, self.max_cycles, self.step_tol, self.step_maxit)


@dataclasses.dataclass
class StepRecord:
    n: int
    iterations: int
    residuals: list
    cycles: int
    converged: bool
    # iterations that used the tangent-augmented Jacobian
    tangent_iterations: int = 0


@dataclasses.dataclass(eq=False)
class MacroSolution:
    system: object
    mesh: MacroMesh
    Y: PiecewiseLinearFn
    orbits: dict
    newton_stats: list
    tols: SolverTolerances

    @property
    def effort(self) -> float:
        """``sum_n (1 + 1/k_n)``."""
        return self.mesh.effort()

    @property
    def cycles_total(self) -> int:
        return sum(r.cycles for r in self.newton_stats)

    @property
    def micro_steps_done(self) -> int:
        """Micro steps actually integrated during the primal solve (all cycles)."""
        return int(sum(r.cycles * self.mesh.micro_counts[r.n - 1] for r in self.newton_stats))

    @property
    def max_defect(self) -> float:
        return max(o.defect for o in self.orbits.values())

    def gauss_states(self) -> np.ndarray:
        return self.Y.at_gauss()

    def goal(self, goal) -> float:
        return goal(self.Y.values)


def _evaluate(system, Y_prev, Y_n, K, grid, warm, tols, full=False):
    orbits, F, G = [], [], []
    cycles = 0
    for q in range(2):
        th = GAUSS_THETA[q]
        Yq = (1.0 - th) * Y_prev + th * Y_n
        orb = solve_periodic(system, Yq, grid, tol_p=tols.tol_p, max_cycles=tols.max_cycles,
                             warm_start=None if warm is None else warm[q], tols=tols.micro)
        cycles += orb.cycles_used
        orbits.append(orb)
        F.append(transfer(system, Yq, orb))
        G.append(transfer_grad_full(system, Yq, orb) if full else transfer_grad_partial(system, Yq, orb))
    r = Y_n - Y_prev - 0.5 * system.epsilon * K * (F[0] + F[1])
    return r, orbits, G, cycles


def macro_step(system, Y_prev, n: int, mesh: MacroMesh, tols: SolverTolerances | None = None,
               guess=None, warm=None):
    """Solve one macro step on ``I_n`` (1-based) for the right nodal value.

    Returns ``(Y_n, record, orbits)``; ``orbits`` are the converged Gauss point
    orbits belonging to the returned ``Y_n``.
    """
    tols = tols or SolverTolerances()
    Y_prev = np.asarray(Y_prev, dtype=float).reshape(system.c)
    if not np.all(np.isfinite(Y_prev)):
        raise StepError(f"non-finite slow state entering step {n}", interval=n)
    K = mesh.steps[n - 1]
    grid = mesh.micro_grid(n)
    Y_n = Y_prev.copy() if guess is None else np.asarray(guess, dtype=float).reshape(system.c).copy()
    eye = np.eye(system.c)
    residuals = []
    cycles = 0
    full = False
    tangent_its = 0
    step_tols = tols
    for it in range(tols.max_newton + 1):
        r, orbits, G, cyc = _evaluate(system, Y_prev, Y_n, K, grid, warm, step_tols, full)
        cycles += cyc
        rn = float(np.max(np.abs(r)))
        residuals.append(rn)
        ratio = rn / residuals[-2] if it > 0 and residuals[-2] > 0 else 0.0
        if rn <= tols.newton_tol or (ratio > 0.5 and rn <= tols.newton_floor):
            return Y_n, StepRecord(n, it, residuals, cycles, True, tangent_its), orbits
        if it == tols.max_newton:
            break
        if ratio > 0.25:
            if not full:
                full = True
                log.debug("step %d: approximate Newton not contracting, adding the tangent term", n)
                G = [transfer_grad_full(system, o.anchor, o) for o in orbits]
            elif ratio > 0.5 and step_tols.tol_p > _TOL_P_MIN:
                # the exact Jacobian stalls only on orbit noise: resolve orbits tighter
                step_tols = dataclasses.replace(step_tols, tol_p=max(_TOL_P_MIN, 1e-2 * step_tols.tol_p))
        tangent_its += full
        jac = eye - 0.5 * system.epsilon * K * (GAUSS_THETA[0] * G[0] + GAUSS_THETA[1] * G[1])
        Y_n = Y_n - np.linalg.solve(jac, r)
        warm = [o.end_state for o in orbits]
    raise StepError(
        f"Newton did not converge on interval {n} (residuals {residuals[-3:]})",
        interval=n, residuals=residuals,
    )


def solve_macro(system, mesh: MacroMesh, tols: SolverTolerances | None = None) -> MacroSolution:
    """March all macro steps and keep the Gauss point orbits for later reuse."""
    tols = tols or SolverTolerances()
    N = mesh.N
    values = np.empty((N + 1, system.c))
    values[0] = system.y0
    orbits = {}
    stats = []
    warm = None
    slope = None
    K = mesh.steps
    for n in range(1, N + 1):
        guess = values[n - 1] if slope is None else values[n - 1] + K[n - 1] * slope
        try:
            Y_n, rec, orb = macro_step(system, values[n - 1], n, mesh, tols, guess=guess, warm=warm)
        except HMMError as err:
            if getattr(err, "interval", None) is None:
                err.interval = n
            log.error("macro step %d failed: %s", n, err)
            raise
        values[n] = Y_n
        orbits[(n, 1)], orbits[(n, 2)] = orb
        stats.append(rec)
        warm = [o.end_state for o in orb]
        slope = (values[n] - values[n - 1]) / K[n - 1]
    return MacroSolution(system, mesh, PiecewiseLinearFn(mesh.nodes, values), orbits, stats, tols)


def galerkin_residuals(system, solution: MacroSolution) -> np.ndarray:
    """``A_k(Y_K, chi_{I_n})`` for every interval, from the cached orbits, shape ``(N, c)``."""
    mesh = solution.mesh
    Yv = solution.Y.values
    out = np.empty((mesh.N, system.c))
    Yg = solution.Y.at_gauss()
    for n in range(1, mesh.N + 1):
        F = sum(transfer(system, Yg[n - 1, q], solution.orbits[(n, q + 1)]) for q in range(2))
        out[n - 1] = Yv[n] - Yv[n - 1] - 0.5 * system.epsilon * mesh.steps[n - 1] * F
    return out


def write_trajectory_csv(solution: MacroSolution, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        c = solution.Y.values.shape[1]
        w.writerow(["T"] + [f"Y{i + 1}" for i in range(c)])
        for t, row in zip(solution.mesh.nodes, solution.Y.values):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in row])
