"""Uniform runs, the convergence grid and the effort comparison."""

from __future__ import annotations

import concurrent.futures
import dataclasses
import logging
import math
import time

from .adaptivity import AdaptConfig, adapt_loop
from .adjoint import solve_macro_adjoint
from .discretization import MacroMesh
from .estimator import effectivity, effort, estimate, indicator_index
from .exceptions import HMMError
from .macro import SolverTolerances, solve_macro
from .reference import solve_resolved
from .systems import GoalFunctional

__all__ = [
    "GRID_K",
    "GRID_k",
    "run_uniform",
    "run_convergence",
    "uniform_sequence",
    "run_uniform_sequence",
    "EffortRow",
    "run_compare_effort",
]

log = logging.getLogger(__name__)

# macro steps as listed in the published table; the micro steps are 0.1 * 2^-j
GRID_K = (100000.0, 50000.0, 20000.0, 10000.0, 5000.0, 2500.0)
GRID_k = tuple(0.1 * 2.0**-j for j in range(6))


def run_uniform(system, K: float, k: float, J_ref: float | None = None, goal=None,
                tols: SolverTolerances | None = None, conformity: bool = True) -> dict:
    """Primal, adjoint and estimator on a uniform mesh; one Table-1-shaped row."""
    goal = goal or GoalFunctional(0)
    start = time.perf_counter()
    mesh = MacroMesh.uniform(system.T, K, k)
    sol = solve_macro(system, mesh, tols)
    adj = solve_macro_adjoint(system, sol, goal)
    br = estimate(system, sol, adj, with_conformity=conformity)
    row = {
        "k": float(k),
        "K": float(K),
        "err": math.nan if J_ref is None else float(J_ref - br.J),
        "eta": br.eta_total,
        "eta_EG": br.sum_EG,
        "eta_EF": br.sum_EF,
        "eta_EFp": br.eta_EFprime,
        "eff": math.nan if J_ref is None else effectivity(br, J_ref),
        "ind": math.nan if J_ref is None else indicator_index(br, J_ref),
        "J": br.J,
        "N": mesh.N,
        "effort": sol.effort,
        "cycles": sol.cycles_total,
        "max_defect": sol.max_defect,
        "seconds": time.perf_counter() - start,
        "status": "ok",
    }
    return row


def _cell(args):
    system, K, k, J_ref, tols, conformity = args
    if system.origin is not None:
        system = system.rebuild()
    try:
        return run_uniform(system, K, k, J_ref, tols=tols, conformity=conformity)
    except HMMError as err:
        log.error("cell K=%g k=%g failed: %s", K, k, err)
        return {"k": k, "K": K, "status": f"failed: {err}"}


def run_convergence(system, J_ref: float | None, Ks=GRID_K, ks=GRID_k, jobs: int = 1,
                    tols: SolverTolerances | None = None, conformity: bool = True) -> list:
    """All ``(K, k)`` cells, rows ordered by ``k`` then ``K`` as in the published table.

    Failed cells are reported with a ``status`` message and do not stop the run.
    """
    cells = [(system, K, k, J_ref, tols, conformity) for k in ks for K in Ks]
    if jobs > 1 and system.origin is None:
        log.warning("custom systems cannot be shipped to worker processes; running sequentially")
        jobs = 1
    if jobs <= 1:
        return [_cell(c) for c in cells]
    with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_cell, cells))


def uniform_sequence(K0: float, k0: float, steps: int):
    """Uniform refinement alternating macro and micro, macro first."""
    K, k = K0, k0
    out = [(K, k)]
    for i in range(steps):
        if i % 2 == 0:
            K /= 2.0
        else:
            k /= 2.0
        out.append((K, k))
    return out


def run_uniform_sequence(system, J_ref: float, K0: float = 50000.0, k0: float = 0.05,
                         target: float = 5e-5, max_steps: int = 12,
                         tols: SolverTolerances | None = None) -> list:
    """Alternating uniform refinement until ``|err| <= target``; rows carry cumulative effort."""
    rows = []
    cumulative = 0.0
    for K, k in uniform_sequence(K0, k0, max_steps):
        row = run_uniform(system, K, k, J_ref, tols=tols, conformity=False)
        cumulative += row["effort"]
        row["cumulative_effort"] = cumulative
        rows.append(row)
        if abs(row["err"]) <= target:
            break
    return rows


@dataclasses.dataclass(frozen=True)
class EffortRow:
    approach: str
    error: float
    k: float
    K: float | None
    micro_steps: float
    # cycles actually integrated in the primal solves (the x5 above is a convention)
    cycles_recorded: int | None = None


def run_compare_effort(system, J_ref: float, target: float = 5e-5, resolved_k: float = 1.0 / 200.0,
                       K0: float = 50000.0, k0: float = 0.05, config: AdaptConfig | None = None,
                       multiplier_adjoint: float = 2, multiplier_cycles: float = 5,
                       tols: SolverTolerances | None = None, resolved: bool = True):
    """Resolved vs uniform vs adaptive effort at the first discretization below ``target``.

    Multiscale effort is the cumulative ``sum (1 + 1/k_n)`` over the sequence of
    meshes times the adjoint and cycle multipliers.  Returns
    ``(rows, uniform_rows, adaptive_trace)``.
    """
    rows = []
    if resolved:
        run = solve_resolved(system, resolved_k)
        rows.append(EffortRow("resolved", J_ref - run.J, resolved_k, None, float(run.steps)))
    mult = multiplier_adjoint * multiplier_cycles
    uni = run_uniform_sequence(system, J_ref, K0, k0, target, tols=tols)
    last = uni[-1]
    rows.append(EffortRow("multiscale-uniform", last["err"], last["k"], last["K"],
                          last["cumulative_effort"] * mult, sum(r["cycles"] for r in uni)))
    config = config or AdaptConfig(max_iterations=12)
    trace = adapt_loop(system, MacroMesh.uniform(system.T, K0, k0), config, GoalFunctional(0), tols)
    hit = None
    for it in trace.iterations:
        if abs(J_ref - it.J) <= target:
            hit = it
            break
    if hit is None and trace.iterations:
        hit = trace.iterations[-1]
    if hit is not None:
        mesh = hit.mesh
        cycles = sum(it.cycles for it in trace.iterations[: hit.l])
        rows.append(EffortRow("multiscale-adaptive", J_ref - hit.J, float(mesh.micro_steps.min()),
                              float(mesh.steps.min()), hit.cumulative_effort * mult, cycles))
    return rows, uni, trace


def effort_total(mesh: MacroMesh) -> float:
    return effort(mesh).total
