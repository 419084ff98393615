import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hmmdwr.adaptivity import AdaptConfig, adapt_loop, adapt_step, write_trace
from hmmdwr.discretization import MacroMesh
from hmmdwr.estimator import EstimatorBreakdown
from hmmdwr.exceptions import ConfigurationError
from hmmdwr.systems import GoalFunctional

from conftest import separable

GOAL = GoalFunctional(0)


def _breakdown(mesh, eg, ef):
    return EstimatorBreakdown(mesh, np.asarray(eg, float), np.asarray(ef, float), 0.0, 0.0,
                              mesh.effort(), 0.0)


def test_uniform_breakdown_changes_nothing():
    mesh = MacroMesh.uniform(12.0, 1.0, 0.05)
    new, dec = adapt_step(mesh, _breakdown(mesh, np.full(12, 1e-4), np.full(12, 2e-4)), AdaptConfig())
    assert new is mesh and set(dec.values()) == {"none"}


def test_mixed_refinement_scenario():
    mesh = MacroMesh.uniform(12.0, 1.0, 0.05)
    eg = np.full(12, 1e-6)
    ef = np.full(12, 1e-6)
    ef[[1, 11]] = 1e-4  # intervals 2 and 12: micro dominated
    eg[7] = 1e-4        # interval 8: macro dominated
    new, dec = adapt_step(mesh, _breakdown(mesh, eg, ef), AdaptConfig(beta=1.2))
    assert dec[2] == dec[12] == "micro" and dec[8] == "macro"
    assert sum(v != "none" for v in dec.values()) == 3
    assert new.N == 14
    np.testing.assert_allclose(new.nodes[6:11], [6.0, 6.5, 7.0, 7.5, 8.0])
    # partner 7 keeps its micro step, 2 and 12 are halved
    assert new.micro_steps[1] == 0.025 and new.micro_steps[-1] == 0.025
    np.testing.assert_allclose(new.micro_steps[6:10], 0.05)


def test_single_equal_split_refines_both():
    mesh = MacroMesh.uniform(8.0, 1.0, 0.1)
    eg = np.zeros(8)
    ef = np.zeros(8)
    eg[4] = ef[4] = 1e-3
    new, dec = adapt_step(mesh, _breakdown(mesh, eg, ef), AdaptConfig())
    assert dec[5] == "both" and new.N == 10
    # both halves of interval 5 get the finer micro grid, its partner keeps the old one
    np.testing.assert_array_equal(new.micro_steps[4:8], [0.05, 0.05, 0.1, 0.1])


def test_exact_tie_counts_as_both():
    mesh = MacroMesh.uniform(4.0, 1.0, 0.1)
    eg = np.array([1.2e-3, 0, 0, 0])
    ef = np.array([1e-3, 0, 0, 0])
    _, dec = adapt_step(mesh, _breakdown(mesh, eg, ef), AdaptConfig(beta=1.2))
    assert dec[1] == "both"


@given(
    eg=st.lists(st.floats(0, 1e-3), min_size=8, max_size=8),
    ef=st.lists(st.floats(0, 1e-3), min_size=8, max_size=8),
    beta=st.floats(1.0, 2.0),
)
def test_refinement_preserves_structure(eg, ef, beta):
    mesh = MacroMesh.uniform(8.0, 1.0, 0.1)
    cfg = AdaptConfig(beta=beta)
    new, dec = adapt_step(mesh, _breakdown(mesh, eg, ef), cfg)
    assert new.has_patches() and new.effort() >= mesh.effort()
    again, dec2 = adapt_step(mesh, _breakdown(mesh, eg, ef), cfg)
    assert again == new and dec2 == dec
    ind = np.abs(eg) + np.abs(ef)
    flagged = {n for n, d in dec.items() if d != "none"}
    assert flagged == {n for n in range(1, 9) if ind[n - 1] > beta * ind.mean()}


def test_config_validation():
    with pytest.raises(ConfigurationError):
        AdaptConfig(beta=0.9)
    with pytest.raises(ConfigurationError):
        AdaptConfig(max_iterations=0)
    with pytest.raises(ConfigurationError):
        AdaptConfig(target_error=-1.0)
    mesh = MacroMesh.uniform(4.0, 1.0, 0.1)
    with pytest.raises(ConfigurationError):
        adapt_step(mesh, _breakdown(MacroMesh.uniform(4.0, 2.0, 0.1), [0, 0], [0, 0]), AdaptConfig())


def test_frozen_slow_variable_stops_immediately():
    sys = separable(epsilon=0.0, T=40.0)
    trace = adapt_loop(sys, MacroMesh.uniform(sys.T, 10.0, 0.1), AdaptConfig(max_iterations=4), GOAL)
    assert trace.stop_reason == "nothing to refine" and len(trace.iterations) == 1
    assert trace.final.breakdown.eta_total == 0.0


def test_loop_records_nested_meshes(tmp_path):
    sys = separable(epsilon=1e-2, T=40.0)
    trace = adapt_loop(sys, MacroMesh.uniform(sys.T, 10.0, 0.1), AdaptConfig(max_iterations=3), GOAL)
    assert trace.stop_reason in ("iteration cap", "nothing to refine")
    cum = [it.cumulative_effort for it in trace.iterations]
    assert cum == sorted(cum)
    for a, b in zip(trace.iterations, trace.iterations[1:]):
        assert set(a.mesh.nodes) <= set(b.mesh.nodes)
    write_trace(trace, tmp_path, J_ref=np.sqrt(1.8) - 1)
    head = (tmp_path / "summary.csv").read_text().splitlines()[0]
    assert head.startswith("l,N,J,eta_total,effort,cumulative_effort")
    assert (tmp_path / "breakdown_01.csv").exists() and (tmp_path / "mesh_01.csv").exists()


def test_target_error_stops_loop():
    sys = separable(epsilon=1e-2, T=40.0)
    trace = adapt_loop(sys, MacroMesh.uniform(sys.T, 10.0, 0.1),
                       AdaptConfig(max_iterations=8, target_error=1.0), GOAL)
    assert trace.stop_reason == "target reached" and len(trace.iterations) == 1


def test_solver_failure_keeps_partial_trace():
    sys = separable(epsilon=1e-2, T=40.0)
    from hmmdwr.macro import SolverTolerances
    trace = adapt_loop(sys, MacroMesh.uniform(sys.T, 10.0, 0.1), AdaptConfig(max_iterations=3), GOAL,
                       tols=SolverTolerances(max_cycles=1))
    assert trace.stop_reason == "solver failure" and trace.error is not None


def test_first_benchmark_starts_with_micro_refinement(osc1):
    J_ref = 1.08704164
    trace = adapt_loop(osc1, MacroMesh.uniform(osc1.T, 50000.0, 0.05), AdaptConfig(max_iterations=5), GOAL)
    assert len(trace.iterations) == 5
    for it in trace.iterations[:3]:
        assert set(it.decisions.values()) <= {"none", "micro"}
    assert [it.mesh.N for it in trace.iterations[:4]] == [12] * 4
    errs = [abs(J_ref - it.J) for it in trace.iterations]
    assert errs == sorted(errs, reverse=True)
    assert abs(trace.final.breakdown.eta_total / (J_ref - trace.final.J) - 1) < 0.3
