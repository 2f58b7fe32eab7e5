import numpy as np
import pytest

from polygcc import fixtures
from polygcc.lmi import AssumptionViolation
from polygcc.model import (
    CostSpec,
    FailureModel,
    InterconnectedSystem,
    InterconnectionLink,
    PolytopicSubsystem,
    evaluate_at_alpha,
)
from polygcc.synthesis import (
    SubsystemDesign,
    SynthesisOptions,
    SynthesisResult,
    ValidationFailure,
    cost_bound_for_initial_state,
    expected_cost_bound,
    load_result,
    save_result,
    synthesize_reliable_gcc,
    synthesize_stabilizing,
)

pytestmark = pytest.mark.filterwarnings("error::RuntimeWarning")


@pytest.fixture(scope="module")
def demo():
    return fixtures.demo_system()


@pytest.fixture(scope="module")
def reliable_result(demo):
    system, cost, failures = demo
    return synthesize_reliable_gcc(system, cost, failures)


@pytest.fixture(scope="module")
def stability_result():
    return synthesize_stabilizing(fixtures.stability_demo_system())


class TestStabilitySynthesis:
    def test_scalar_fixture_feasible(self, stability_result):
        assert stability_result.feasible
        assert stability_result.mode == "stability"

    def test_closed_loop_vertices_hurwitz(self, stability_result):
        system = fixtures.stability_demo_system()
        for i, design in enumerate(stability_result.designs):
            for k in range(system.vertex_count):
                a = system.subsystems[i].vertex_a[k]
                b = system.subsystems[i].vertex_b[k]
                eigs = np.linalg.eigvals(a + b @ design.gain)
                assert eigs.real.max() < -1e-6

    def test_gain_recovery_invariant(self, stability_result):
        for design in stability_result.designs:
            drift = np.linalg.norm(design.gain @ design.slack - design.gain_surrogate)
            assert drift <= 1e-9 * (1.0 + np.linalg.norm(design.gain_surrogate))

    def test_gains_are_moderate(self, stability_result):
        for design in stability_result.designs:
            assert np.abs(design.gain).max() < 1e3

    def test_uncontrollable_vertex_reported_not_fatal(self):
        # subsystem 0 has an unstable vertex with zero control authority: no
        # gain can move its eigenvalue, so its family must be infeasible
        bad = PolytopicSubsystem(
            index=0, state_dim=1, input_dim=1, coupling_dim=1,
            vertex_a=([[1.0]], [[0.5]]), vertex_b=([[0.0]], [[0.0]]),
        )
        good = PolytopicSubsystem(
            index=1, state_dim=1, input_dim=1, coupling_dim=1,
            vertex_a=([[-1.0]], [[-2.0]]), vertex_b=([[1.0]], [[1.0]]),
        )
        links = (
            InterconnectionLink(source=1, target=0, gain=[[0.5]], bound=[[1.0]]),
            InterconnectionLink(source=0, target=1, gain=[[0.5]], bound=[[1.0]]),
        )
        system = InterconnectedSystem(subsystems=(bad, good), links=links)
        result = synthesize_stabilizing(system)
        assert not result.feasible
        assert result.infeasible_subsystems == (0,)
        assert result.designs[1].feasible

    def test_zero_gain_hook_on_stable_plant(self):
        import scipy.linalg

        system = fixtures.stability_demo_system()
        # open-loop robust stability oracle: vertex Lyapunov equations solvable
        for sub in system.subsystems:
            for a in sub.vertex_a:
                x = scipy.linalg.solve_continuous_lyapunov(a.T, -np.eye(1))
                assert x[0, 0] > 0
        result = synthesize_stabilizing(system, fix_gain_zero=True)
        assert result.feasible
        for design in result.designs:
            assert np.allclose(design.gain, 0.0)

    def test_validation_failure_raises(self):
        lonely = InterconnectedSystem(
            subsystems=(fixtures.stability_demo_system().subsystems[0],), links=()
        )
        with pytest.raises(ValidationFailure):
            synthesize_stabilizing(lonely)


class TestReliableSynthesis:
    def test_demo_feasible_with_outage(self, reliable_result):
        assert reliable_result.feasible
        assert reliable_result.mode == "reliable"
        assert expected_cost_bound(reliable_result) > 0

    def test_assumption3_fails_fast(self, demo):
        system, _, failures = demo
        cost = CostSpec(Q=([[0.5]], [[0.5]]), R=([[1.0]], [[1.0]]))
        with pytest.raises(AssumptionViolation) as err:
            synthesize_reliable_gcc(system, cost, failures)
        assert err.value.assumption == 3
        assert "negative definite" in str(err.value)

    def test_stability_mode_still_works_when_r_too_big(self, demo):
        system, _, _ = demo
        result = synthesize_stabilizing(system)
        assert result.feasible

    def test_lyapunov_at_vertices(self, reliable_result):
        for i, design in enumerate(reliable_result.designs):
            for k in range(reliable_result.vertex_count):
                alpha = np.eye(reliable_result.vertex_count)[k]
                x = reliable_result.lyapunov_at(i, alpha)
                assert np.allclose(x, design.lyapunov_inverses[k], atol=1e-10)

    def test_lyapunov_interior_spd(self, reliable_result):
        rng = np.random.default_rng(14)
        for _ in range(10):
            w = rng.dirichlet(np.ones(reliable_result.vertex_count))
            for i in range(len(reliable_result.designs)):
                x = reliable_result.lyapunov_at(i, w)
                assert np.linalg.eigvalsh(x).min() > 0

    def test_parameter_independent_mode(self, demo):
        system, cost, failures = demo
        result = synthesize_reliable_gcc(
            system, cost, failures, options=SynthesisOptions(parameter_independent=True)
        )
        assert result.feasible
        for design in result.designs:
            assert np.allclose(design.lyapunov_vertices[0], design.lyapunov_vertices[1])

    def test_optimize_trace_tightens_bound(self, demo, reliable_result):
        system, cost, failures = demo
        optimized = synthesize_reliable_gcc(
            system, cost, failures, options=SynthesisOptions(optimize_trace=True)
        )
        assert optimized.feasible
        assert expected_cost_bound(optimized) <= expected_cost_bound(reliable_result) + 1e-6


class TestCostBounds:
    def test_zero_initial_state(self, reliable_result):
        bound = cost_bound_for_initial_state(reliable_result, np.zeros(2))
        assert bound["worst_case"] == 0.0
        assert all(v == 0.0 for v in bound["per_vertex"])

    def test_single_vertex_degenerate(self):
        design = SubsystemDesign(
            index=0, feasible=True, gain=np.zeros((1, 1)),
            lyapunov_vertices=(np.eye(1),), lyapunov_inverses=(np.eye(1),),
            slack=np.eye(1), gain_surrogate=np.zeros((1, 1)), margin=1.0,
            residuals={}, diagnostics={},
        )
        result = SynthesisResult(
            mode="reliable", designs=(design,), vertex_count=1,
            state_dims=(1,), input_dims=(1,), options={},
        )
        bound = cost_bound_for_initial_state(result, [2.0])
        assert len(bound["per_vertex"]) == 1
        assert bound["worst_case"] == bound["per_vertex"][0] == 4.0

    def test_worst_case_matches_simplex_grid_oracle(self):
        rng = np.random.default_rng(15)
        L, n = 3, 2
        xs = []
        for _ in range(L):
            raw = rng.normal(size=(n, n))
            xs.append(raw @ raw.T + np.eye(n))
        design = SubsystemDesign(
            index=0, feasible=True, gain=np.zeros((1, n)),
            lyapunov_vertices=tuple(np.linalg.inv(x) for x in xs),
            lyapunov_inverses=tuple(xs),
            slack=np.eye(n), gain_surrogate=np.zeros((1, n)), margin=1.0,
            residuals={}, diagnostics={},
        )
        result = SynthesisResult(
            mode="reliable", designs=(design,), vertex_count=L,
            state_dims=(n,), input_dims=(1,), options={},
        )
        x0 = rng.normal(size=n)
        bound = cost_bound_for_initial_state(result, x0)

        # brute-force oracle over a dense simplex grid of the affine combination
        best = -np.inf
        steps = 40
        for a in range(steps + 1):
            for b in range(steps + 1 - a):
                w = np.array([a, b, steps - a - b]) / steps
                val = x0 @ sum(w[k] * xs[k] for k in range(L)) @ x0
                best = max(best, val)
        assert abs(bound["worst_case"] - best) <= 1e-9

    def test_expected_bound_trivial_cases(self):
        def result_with(traces):
            designs = []
            for i, per_vertex in enumerate(traces):
                xs = tuple(t * np.eye(2) / 2 for t in per_vertex)
                designs.append(
                    SubsystemDesign(
                        index=i, feasible=True, gain=np.zeros((1, 2)),
                        lyapunov_vertices=tuple(np.linalg.inv(x) for x in xs),
                        lyapunov_inverses=xs, slack=np.eye(2),
                        gain_surrogate=np.zeros((1, 2)), margin=1.0,
                        residuals={}, diagnostics={},
                    )
                )
            return SynthesisResult(
                mode="reliable", designs=tuple(designs),
                vertex_count=len(traces[0]), state_dims=(2,) * len(traces),
                input_dims=(1,) * len(traces), options={},
            )

        # all X = I (n=2, N=2): bound = 4
        identity = result_with([(2.0, 2.0), (2.0, 2.0)])
        assert expected_cost_bound(identity) == pytest.approx(4.0)
        # vertex sums {3, 5} -> 5
        uneven = result_with([(1.0, 2.0), (2.0, 3.0)])
        assert expected_cost_bound(uneven) == pytest.approx(5.0)

    def test_expected_bound_dominates_affine_grid(self, reliable_result):
        jbar = expected_cost_bound(reliable_result)
        rng = np.random.default_rng(16)
        for _ in range(200):
            w = rng.dirichlet(np.ones(reliable_result.vertex_count))
            total = sum(
                np.trace(sum(w[k] * d.lyapunov_inverses[k] for k in range(len(w))))
                for d in reliable_result.designs
            )
            assert total <= jbar + 1e-12

    def test_mode_guard(self, stability_result):
        with pytest.raises(ValueError):
            cost_bound_for_initial_state(stability_result, np.zeros(2))
        with pytest.raises(ValueError):
            expected_cost_bound(stability_result)

    def test_dimension_mismatch(self, reliable_result):
        with pytest.raises(ValueError):
            cost_bound_for_initial_state(reliable_result, np.zeros(5))


class TestResultIo:
    def test_round_trip(self, tmp_path, reliable_result):
        path = tmp_path / "result.json"
        save_result(reliable_result, path, metadata={"seed": 0})
        loaded, meta = load_result(path)
        assert meta["seed"] == 0
        assert loaded.mode == reliable_result.mode
        assert loaded.feasible
        for orig, back in zip(reliable_result.designs, loaded.designs):
            assert np.allclose(orig.gain, back.gain, atol=0)
            for y1, y2 in zip(orig.lyapunov_vertices, back.lyapunov_vertices):
                assert np.allclose(y1, y2, atol=0)
        assert expected_cost_bound(loaded) == pytest.approx(
            expected_cost_bound(reliable_result), abs=0
        )
