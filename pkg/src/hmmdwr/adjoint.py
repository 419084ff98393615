"""Discrete macro adjoint.

Testing the linearised macro form with the nodal hat functions gives, with
``L_n = I - eps K_n/2 sum_q theta_q G_nq`` and
``R_n = I + eps K_n/2 sum_q (1 - theta_q) G_nq``::

    L_N^T Z_N = J'              (hat at T_N)
    L_j^T Z_j = R_{j+1}^T Z_{j+1}

where ``G_nq`` is the full transfer derivative (tangent term included) at
the Gauss point orbits cached by the primal solve.
"""

from __future__ import annotations

import csv
import dataclasses

import numpy as np

from .discretization import GAUSS_THETA, MacroMesh, PiecewiseConstantFn
from .exceptions import AdjointAssemblyError
from .micro import solve_tangent, transfer_grad_full

__all__ = [
    "MacroAdjoint",
    "full_gradients",
    "step_matrices",
    "solve_macro_adjoint",
    "adjoint_residuals",
    "write_adjoint_csv",
]

_COND_LIMIT = 1e12


@dataclasses.dataclass(eq=False)
class MacroAdjoint:
    mesh: MacroMesh
    Z: PiecewiseConstantFn
    tangent_cache: dict
    grad_cache: dict
    goal: object
    L: np.ndarray = dataclasses.field(repr=False, default=None)  # (N, c, c)
    R: np.ndarray = dataclasses.field(repr=False, default=None)

    @property
    def gradients(self) -> np.ndarray:
        """Full gradients at the Gauss points, shape ``(N, 2, c, c)``."""
        N = self.mesh.N
        return np.array([[self.grad_cache[(n, q)] for q in (1, 2)] for n in range(1, N + 1)])


def full_gradients(system, solution):
    """Tangents and full transfer gradients at every cached Gauss point orbit."""
    Yg = solution.Y.at_gauss()
    tangents, grads = {}, {}
    for (n, q), orb in solution.orbits.items():
        Yq = Yg[n - 1, q - 1]
        tan = solve_tangent(system, Yq, orb)
        tangents[(n, q)] = tan
        grads[(n, q)] = transfer_grad_full(system, Yq, orb, tan)
    return tangents, grads


def step_matrices(system, mesh: MacroMesh, grads):
    """``L_n`` and ``R_n`` for every interval, each ``(N, c, c)``."""
    N, c = mesh.N, system.c
    eye = np.eye(c)
    L = np.empty((N, c, c))
    R = np.empty((N, c, c))
    for n in range(1, N + 1):
        h = 0.5 * system.epsilon * mesh.steps[n - 1]
        G1, G2 = grads[(n, 1)], grads[(n, 2)]
        L[n - 1] = eye - h * (GAUSS_THETA[0] * G1 + GAUSS_THETA[1] * G2)
        R[n - 1] = eye + h * ((1.0 - GAUSS_THETA[0]) * G1 + (1.0 - GAUSS_THETA[1]) * G2)
    return L, R


def solve_macro_adjoint(system, solution, goal) -> MacroAdjoint:
    """Backward recursion for ``Z_{K,k}``, piecewise constant on the macro mesh."""
    mesh = solution.mesh
    tangents, grads = full_gradients(system, solution)
    L, R = step_matrices(system, mesh, grads)
    N = mesh.N
    Z = np.empty((N, system.c))
    rhs = goal.terminal_derivative(system.c)
    for n in range(N, 0, -1):
        LT = L[n - 1].T
        # measured against the identity part, so 1x1 blocks are covered too
        smin = np.linalg.svd(LT, compute_uv=False)[-1]
        scale = max(1.0, np.abs(LT).max(), np.abs(R[n - 1]).max())
        if not np.isfinite(smin) or smin < scale / _COND_LIMIT:
            raise AdjointAssemblyError(
                f"adjoint block on interval {n} is singular (smallest singular value {smin:.3e})"
            )
        Z[n - 1] = np.linalg.solve(LT, rhs)
        rhs = R[n - 1].T @ Z[n - 1]
    return MacroAdjoint(mesh, PiecewiseConstantFn(mesh.nodes, Z), tangents, grads, goal, L, R)


def adjoint_residuals(adjoint: MacroAdjoint, c: int) -> np.ndarray:
    """``A'(Y)(phi_j, Z) - J'(phi_j)`` for every nodal hat ``phi_j``, j = 1..N; shape ``(N, c)``.

    Each row holds the residual for the ``c`` vector-valued hats at node ``T_j``.
    """
    Z = adjoint.Z.values
    L, R = adjoint.L, adjoint.R
    N = Z.shape[0]
    out = np.einsum("nij,ni->nj", L, Z)
    out[:-1] -= np.einsum("nij,ni->nj", R[1:], Z[1:])
    out[N - 1] -= adjoint.goal.terminal_derivative(c)
    return out


def write_adjoint_csv(adjoint: MacroAdjoint, path):
    mesh = adjoint.mesh
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        c = adjoint.Z.values.shape[1]
        w.writerow(["n", "T_mid"] + [f"Z{i + 1}" for i in range(c)])
        for n, (t, row) in enumerate(zip(mesh.midpoints, adjoint.Z.values), start=1):
            w.writerow([n, repr(float(t))] + [repr(float(x)) for x in row])
