"""Threshold refinement driven by the localized estimator.

An interval is flagged when ``|eta_EG^n| + |eta_EF^n| > beta * mean``.  A
flagged interval gets a macro split (together with its patch partner) when
the macro part dominates by the factor ``beta``, a halved micro step when the
micro part dominates, and both otherwise.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import os

import numpy as np

from .adjoint import solve_macro_adjoint
from .discretization import MacroMesh, refine, write_mesh_csv
from .estimator import EstimatorBreakdown, estimate, write_breakdown_csv
from .exceptions import ConfigurationError, HMMError
from .macro import SolverTolerances, solve_macro

__all__ = ["AdaptConfig", "AdaptIteration", "AdaptTrace", "adapt_step", "adapt_loop", "write_trace"]

log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class AdaptConfig:
    beta: float = 1.2
    max_iterations: int = 10
    target_error: float | None = None
    conformity: bool = True

    def __post_init__(self):
        if not self.beta >= 1.0:
            raise ConfigurationError(f"beta must be >= 1, got {self.beta}")
        if self.max_iterations < 1:
            raise ConfigurationError("need at least one iteration")
        if self.target_error is not None and not self.target_error > 0:
            raise ConfigurationError("target_error must be positive")


@dataclasses.dataclass
class AdaptIteration:
    l: int
    mesh: MacroMesh
    breakdown: EstimatorBreakdown
    J: float
    effort: float
    cumulative_effort: float
    decisions: dict
    cycles: int


@dataclasses.dataclass
class AdaptTrace:
    iterations: list = dataclasses.field(default_factory=list)
    error: Exception | None = None
    stop_reason: str = ""

    @property
    def final(self) -> AdaptIteration:
        return self.iterations[-1]


def adapt_step(mesh: MacroMesh, breakdown: EstimatorBreakdown, config: AdaptConfig):
    """One marking/refinement pass; returns ``(new_mesh, decisions)``.

    ``decisions`` maps every interval ``n`` (1-based) to ``macro``, ``micro``,
    ``both`` or ``none``.
    """
    if breakdown.N != mesh.N:
        raise ConfigurationError("breakdown does not match the mesh")
    eg = np.abs(breakdown.eta_EG)
    ef = np.abs(breakdown.eta_EF)
    ind = eg + ef
    mean = ind.mean()
    beta = config.beta
    decisions = {}
    macro, micro = [], []
    for n in range(1, mesh.N + 1):
        i = n - 1
        if not ind[i] > beta * mean:
            decisions[n] = "none"
        elif eg[i] > beta * ef[i]:
            decisions[n] = "macro"
            macro.append(n)
        elif ef[i] > beta * eg[i]:
            decisions[n] = "micro"
            micro.append(n)
        else:
            decisions[n] = "both"
            macro.append(n)
            micro.append(n)
    if not macro and not micro:
        return mesh, decisions
    return refine(mesh, macro=macro, micro=micro), decisions


def adapt_loop(system, mesh: MacroMesh, config: AdaptConfig, goal,
               tols: SolverTolerances | None = None, callback=None) -> AdaptTrace:
    """Solve, estimate and refine until the iteration cap or the target is reached.

    Solver failures end the loop; the partial trace carries the exception.
    """
    trace = AdaptTrace()
    cumulative = 0.0
    for l in range(1, config.max_iterations + 1):
        try:
            sol = solve_macro(system, mesh, tols)
            adj = solve_macro_adjoint(system, sol, goal)
            br = estimate(system, sol, adj, with_conformity=config.conformity)
        except HMMError as err:
            log.error("adaptive iteration %d failed: %s", l, err)
            trace.error = err
            trace.stop_reason = "solver failure"
            return trace
        cumulative += sol.effort
        it = AdaptIteration(l, mesh, br, br.J, sol.effort, cumulative, {}, sol.cycles_total)
        trace.iterations.append(it)
        if callback is not None:
            callback(it)
        if config.target_error is not None and abs(br.eta_total) <= config.target_error:
            trace.stop_reason = "target reached"
            return trace
        if l == config.max_iterations:
            trace.stop_reason = "iteration cap"
            return trace
        new_mesh, decisions = adapt_step(mesh, br, config)
        it.decisions = decisions
        if new_mesh is mesh:
            trace.stop_reason = "nothing to refine"
            return trace
        mesh = new_mesh
    return trace


def write_trace(trace: AdaptTrace, directory, J_ref: float | None = None):
    """Per-iteration breakdown and mesh CSVs plus ``summary.csv``."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "summary.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        head = ["l", "N", "J", "eta_total", "effort", "cumulative_effort", "eta_EG", "eta_EF", "eta_EFp",
                "cycles"]
        if J_ref is not None:
            head.append("err")
        w.writerow(head)
        for it in trace.iterations:
            br = it.breakdown
            row = [it.l, it.mesh.N, repr(it.J), repr(br.eta_total), repr(it.effort), repr(it.cumulative_effort),
                   repr(br.sum_EG), repr(br.sum_EF), repr(br.eta_EFprime), it.cycles]
            if J_ref is not None:
                row.append(repr(J_ref - it.J))
            w.writerow(row)
            write_breakdown_csv(br, os.path.join(directory, f"breakdown_{it.l:02d}.csv"))
            write_mesh_csv(it.mesh, os.path.join(directory, f"mesh_{it.l:02d}.csv"))
