"""Dual weighted residual estimator of the goal error.

Per macro interval::

    eta_EG^n = -1/2 A_k|n(Y, Z~ - Z) + 1/2 (J'|n(Y~ - Y) - A'_k|n(Y)(Z, Y~ - Y))
    eta_EF^n = 1/2 eps int_{I_n} eta_pi(Y(t)) . (Z~ + Z) dt

with ``Y~`` the patchwise quadratic and ``Z~`` the patchwise linear
reconstruction.  The adjoint conformity part

    eta_EF' = 1/2 eps int (grad F_* - grad F_k)(Y~ - Y) . Z dt

uses full gradients on micro grids of half the step as ``grad F_*``.
All integrals use the two Gauss points of each interval.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import warnings

import numpy as np

from .discretization import (
    GAUSS_THETA,
    MacroMesh,
    PatchQuadraticFn,
    linear_weight_at_gauss,
    quadratic_weight_at_gauss,
)
from .exceptions import ConsistencyError
from .micro import eta_pi, solve_periodic, solve_tangent, transfer, transfer_grad_full

__all__ = [
    "EstimatorBreakdown",
    "EffortCounts",
    "GaussData",
    "gauss_data",
    "estimate",
    "estimate_adjoint_conformity",
    "global_estimate",
    "effectivity",
    "indicator_index",
    "effort",
    "write_breakdown_csv",
    "SUMMARY_COLUMNS",
    "write_summary_csv",
]


@dataclasses.dataclass(frozen=True)
class EstimatorBreakdown:
    mesh: MacroMesh
    eta_EG: np.ndarray
    eta_EF: np.ndarray
    eta_EFprime: float
    J: float
    effort: float
    periodicity_budget: float

    @property
    def N(self) -> int:
        return self.eta_EG.size

    @property
    def eta_total(self) -> float:
        return float(self.eta_EG.sum() + self.eta_EF.sum() + self.eta_EFprime)

    @property
    def sum_EG(self) -> float:
        return float(self.eta_EG.sum())

    @property
    def sum_EF(self) -> float:
        return float(self.eta_EF.sum())

    @property
    def indicators(self) -> np.ndarray:
        """``|eta_EG^n| + |eta_EF^n|``."""
        return np.abs(self.eta_EG) + np.abs(self.eta_EF)

    @property
    def balance_ratio(self) -> float:
        """``sum |eta_EF^n| / sum |eta_EG^n|``."""
        den = np.abs(self.eta_EG).sum()
        return float(np.abs(self.eta_EF).sum() / den) if den > 0 else math.inf


@dataclasses.dataclass(frozen=True)
class EffortCounts:
    E: float
    total: float
    cycles_recorded: int | None = None


@dataclasses.dataclass(frozen=True)
class GaussData:
    """Everything the estimator needs at the Gauss points, arrays indexed ``[n-1, q-1]``."""

    K: np.ndarray            # (N,)
    slopes: np.ndarray       # (N, c)
    F: np.ndarray            # (N, 2, c)
    G: np.ndarray            # (N, 2, c, c) full gradients
    eta_pi: np.ndarray       # (N, 2, c)
    Z: np.ndarray            # (N, c)
    Z_weight: np.ndarray     # (N, 2, c)   Z~ - Z
    Y_weight: np.ndarray     # (N, 2, c)   Y~ - Y
    J_prime_weight: float    # J'(Y~ - Y)


def gauss_data(system, solution, adjoint) -> GaussData:
    mesh = solution.mesh
    if adjoint.mesh != mesh:
        raise ConsistencyError("adjoint and primal live on different meshes")
    N, c = mesh.N, system.c
    Yg = solution.Y.at_gauss()
    F = np.empty((N, 2, c))
    E = np.empty((N, 2, c))
    for n in range(1, N + 1):
        for q in (1, 2):
            orb = solution.orbits.get((n, q))
            if orb is None or (n, q) not in adjoint.grad_cache:
                raise ConsistencyError(f"no cached orbit / gradient for interval {n}, Gauss point {q}")
            F[n - 1, q - 1] = transfer(system, Yg[n - 1, q - 1], orb)
            E[n - 1, q - 1] = eta_pi(system, Yg[n - 1, q - 1], orbit=orb)[0]
    nodes = mesh.nodes
    Yv = solution.Y.values
    Zv = adjoint.Z.values
    # Y~ - Y at T; the parabola interpolates the nodes, so this is rounding only
    tail = PatchQuadraticFn(nodes, Yv)(nodes[-1])[0] - Yv[-1]
    jw = float(adjoint.goal.terminal_derivative(c) @ tail)
    return GaussData(
        K=mesh.steps,
        slopes=solution.Y.slopes(),
        F=F,
        G=adjoint.gradients,
        eta_pi=E,
        Z=Zv,
        Z_weight=linear_weight_at_gauss(nodes, Zv),
        Y_weight=quadratic_weight_at_gauss(nodes, Yv),
        J_prime_weight=jw,
    )


def _local_terms(eps, gd: GaussData):
    N = gd.K.size
    eg = np.empty(N)
    ef = np.empty(N)
    for i in range(N):
        half = 0.5 * gd.K[i]
        # -1/2 A_k|n(Y, Z~ - Z); the time derivative of Y is the slope
        a_res = sum(half * (gd.slopes[i] - eps * gd.F[i, q]) @ gd.Z_weight[i, q] for q in range(2))
        # A'_k|n(Y)(Z, w): the w' part integrates to w(T_n) - w(T_{n-1}) = 0
        a_lin = -sum(eps * half * gd.Z[i] @ (gd.G[i, q] @ gd.Y_weight[i, q]) for q in range(2))
        j_lin = gd.J_prime_weight if i == N - 1 else 0.0
        eg[i] = -0.5 * a_res + 0.5 * (j_lin - a_lin)
        ef[i] = 0.5 * eps * sum(
            half * gd.eta_pi[i, q] @ (2.0 * gd.Z[i] + gd.Z_weight[i, q]) for q in range(2)
        )
    return eg, ef


def estimate_adjoint_conformity(system, solution, adjoint, data: GaussData | None = None) -> float:
    """``eta_EF'`` with full gradients on micro grids of step ``k_n/2`` as the exact surrogate."""
    gd = data or gauss_data(system, solution, adjoint)
    mesh = solution.mesh
    Yg = solution.Y.at_gauss()
    tols = solution.tols
    total = 0.0
    for n in range(1, mesh.N + 1):
        fine = mesh.micro_grid(n).refined()
        for q in (1, 2):
            Yq = Yg[n - 1, q - 1]
            orb = solve_periodic(system, Yq, fine, tol_p=tols.tol_p, max_cycles=tols.max_cycles,
                                 warm_start=solution.orbits[(n, q)].end_state, tols=tols.micro)
            G_star = transfer_grad_full(system, Yq, orb, solve_tangent(system, Yq, orb))
            dG = G_star - gd.G[n - 1, q - 1]
            total += 0.5 * gd.K[n - 1] * gd.Z[n - 1] @ (dG @ gd.Y_weight[n - 1, q - 1])
    return float(0.5 * system.epsilon * total)


def estimate(system, solution, adjoint, goal=None, with_conformity: bool = True) -> EstimatorBreakdown:
    """Localized estimator; ``goal`` defaults to the adjoint's goal."""
    if goal is not None and goal != adjoint.goal:
        raise ConsistencyError("adjoint was computed for a different goal")
    gd = gauss_data(system, solution, adjoint)
    eg, ef = _local_terms(system.epsilon, gd)
    efp = estimate_adjoint_conformity(system, solution, adjoint, gd) if with_conformity else 0.0
    return EstimatorBreakdown(
        mesh=solution.mesh,
        eta_EG=eg,
        eta_EF=ef,
        eta_EFprime=efp,
        J=float(adjoint.goal(solution.Y.values)),
        effort=solution.effort,
        periodicity_budget=solution.max_defect,
    )


def global_estimate(system, data: GaussData, eta_EFprime: float = 0.0) -> float:
    """The same estimator assembled as whole-interval forms in one contraction each."""
    eps = system.epsilon
    w = np.repeat(0.5 * data.K, 2)  # Gauss weights, (2N,)
    c = data.Z.shape[1]
    slopes = np.repeat(data.slopes, 2, axis=0)
    F = data.F.reshape(-1, c)
    Zw = data.Z_weight.reshape(-1, c)
    Yw = data.Y_weight.reshape(-1, c)
    Zc = np.repeat(data.Z, 2, axis=0)
    G = data.G.reshape(-1, c, c)
    E = data.eta_pi.reshape(-1, c)
    a_res = np.einsum("p,pc,pc->", w, slopes - eps * F, Zw)
    a_lin = -eps * np.einsum("p,pc,pcd,pd->", w, Zc, G, Yw)
    macro = -0.5 * a_res + 0.5 * (data.J_prime_weight - a_lin)
    micro = 0.5 * eps * np.einsum("p,pc,pc->", w, E, 2.0 * Zc + Zw)
    return float(macro + micro + eta_EFprime)


def _true_error(J_ref, J_computed):
    err = float(J_ref) - float(J_computed)
    if err == 0.0:
        warnings.warn("true error is zero; effectivity undefined", RuntimeWarning, stacklevel=3)
        return None
    return err


def effectivity(breakdown: EstimatorBreakdown, J_ref: float, J_computed: float | None = None) -> float:
    """``100 * eta / (J_ref - J)`` in percent; NaN when the true error vanishes."""
    err = _true_error(J_ref, breakdown.J if J_computed is None else J_computed)
    return math.nan if err is None else 100.0 * breakdown.eta_total / err


def indicator_index(breakdown: EstimatorBreakdown, J_ref: float, J_computed: float | None = None) -> float:
    """``sum_n (|eta_EG^n| + |eta_EF^n|) / |J_ref - J|``; NaN when the true error vanishes."""
    err = _true_error(J_ref, breakdown.J if J_computed is None else J_computed)
    return math.nan if err is None else float(breakdown.indicators.sum() / abs(err))


def effort(mesh: MacroMesh, multiplier_adjoint: float = 2, multiplier_cycles: float = 5,
           cycles_recorded: int | None = None) -> EffortCounts:
    """``E = sum_n (1 + 1/k_n)`` and the accounting total ``E * 2 * 5``."""
    E = mesh.effort()
    return EffortCounts(E, E * multiplier_adjoint * multiplier_cycles, cycles_recorded)


def write_breakdown_csv(breakdown: EstimatorBreakdown, path):
    mesh = breakdown.mesh
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "T_start", "T_end", "k", "eta_EG", "eta_EF"])
        for n in range(1, mesh.N + 1):
            w.writerow([n, repr(float(mesh.nodes[n - 1])), repr(float(mesh.nodes[n])),
                        repr(float(mesh.micro_steps[n - 1])),
                        repr(float(breakdown.eta_EG[n - 1])), repr(float(breakdown.eta_EF[n - 1]))])


SUMMARY_COLUMNS = ("k", "K", "err", "eta", "eta_EG", "eta_EF", "eta_EFp", "eff")


def write_summary_csv(rows, path):
    """``rows`` are mappings with the keys of :data:`SUMMARY_COLUMNS` (extra keys are appended)."""
    rows = list(rows)
    extra = [key for key in (rows[0] if rows else {}) if key not in SUMMARY_COLUMNS]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(SUMMARY_COLUMNS) + extra)
        w.writeheader()
        for row in rows:
            w.writerow({key: (repr(v) if isinstance(v, float) else v) for key, v in row.items()})
