import json

import numpy as np
import pytest

from polygcc import fixtures
from polygcc.model import (
    CostSpec,
    FailureModel,
    InterconnectedSystem,
    InterconnectionLink,
    ModelError,
    PolytopicSubsystem,
    SimplexPoint,
    coupling_matrix,
    evaluate_at_alpha,
    load_system,
    save_system,
    system_from_dict,
    system_to_dict,
    validate_system,
)


def scalar_subsystem(index, a_vertices, b_vertices=((1.0,),), coupling_dim=1):
    return PolytopicSubsystem(
        index=index,
        state_dim=1,
        input_dim=1,
        coupling_dim=coupling_dim,
        vertex_a=tuple([[a]] for a in a_vertices),
        vertex_b=tuple([[b[0]]] for b in b_vertices) if len(b_vertices) > 1
        else tuple([[b_vertices[0][0]]] for _ in a_vertices),
    )


class TestSimplexPoint:
    def test_vertex(self):
        p = SimplexPoint.vertex(3, 1)
        assert np.array_equal(p.alpha, [0.0, 1.0, 0.0])

    def test_rejects_negative(self):
        with pytest.raises(ModelError):
            SimplexPoint([-0.1, 1.1])

    def test_rejects_bad_sum(self):
        with pytest.raises(ModelError):
            SimplexPoint([0.4, 0.4])

    def test_sum_tolerance(self):
        SimplexPoint([0.5, 0.5 + 5e-13])

    def test_immutable(self):
        p = SimplexPoint([0.5, 0.5])
        with pytest.raises(ValueError):
            p.alpha[0] = 1.0


class TestEvaluateAtAlpha:
    def test_vertex_exact(self):
        sub = scalar_subsystem(0, [-1.0, -3.0])
        a, b = evaluate_at_alpha(sub, SimplexPoint.vertex(2, 1))
        assert a == np.array([[-3.0]])
        assert b == np.array([[1.0]])

    def test_midpoint(self):
        sub = scalar_subsystem(0, [-1.0, -3.0])
        a, _ = evaluate_at_alpha(sub, [0.5, 0.5])
        assert np.allclose(a, [[-2.0]])

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n, s, L = 3, 2, 3
            va = tuple(rng.normal(size=(n, n)) for _ in range(L))
            vb = tuple(rng.normal(size=(n, s)) for _ in range(L))
            sub = PolytopicSubsystem(
                index=0, state_dim=n, input_dim=s, coupling_dim=1, vertex_a=va, vertex_b=vb
            )
            w = rng.dirichlet(np.ones(L))
            a, b = evaluate_at_alpha(sub, w)
            assert np.allclose(a, sum(w[k] * va[k] for k in range(L)), atol=1e-13)
            assert np.allclose(b, sum(w[k] * vb[k] for k in range(L)), atol=1e-13)

    def test_affine_property(self):
        rng = np.random.default_rng(4)
        sub = PolytopicSubsystem(
            index=0, state_dim=2, input_dim=1, coupling_dim=1,
            vertex_a=tuple(rng.normal(size=(2, 2)) for _ in range(3)),
            vertex_b=tuple(rng.normal(size=(2, 1)) for _ in range(3)),
        )
        for _ in range(10):
            wa = rng.dirichlet(np.ones(3))
            wb = rng.dirichlet(np.ones(3))
            lam = rng.uniform()
            mixed = lam * wa + (1 - lam) * wb
            a_mix, b_mix = evaluate_at_alpha(sub, mixed)
            a_a, b_a = evaluate_at_alpha(sub, wa)
            a_b, b_b = evaluate_at_alpha(sub, wb)
            assert np.allclose(a_mix, lam * a_a + (1 - lam) * a_b, atol=1e-12)
            assert np.allclose(b_mix, lam * b_a + (1 - lam) * b_b, atol=1e-12)

    def test_length_mismatch(self):
        sub = scalar_subsystem(0, [-1.0, -3.0])
        with pytest.raises(ModelError):
            evaluate_at_alpha(sub, [1.0])


class TestCouplingMatrix:
    def test_identity_bound(self):
        subs = (scalar_subsystem(0, [-1.0]), scalar_subsystem(1, [-1.0]))
        links = (InterconnectionLink(source=0, target=1, gain=[[0.1]], bound=[[1.0]]),)
        system = InterconnectedSystem(subsystems=subs, links=links)
        assert np.allclose(coupling_matrix(system, 0), [[1.0]])

    def test_rank_deficient_sum(self):
        subs = (
            PolytopicSubsystem(index=0, state_dim=2, input_dim=1, coupling_dim=1,
                               vertex_a=([[-1, 0], [0, -1]],), vertex_b=([[1], [1]],)),
            scalar_subsystem(1, [-1.0]),
            scalar_subsystem(2, [-1.0]),
        )
        links = (
            InterconnectionLink(source=0, target=1, gain=[[0.1]], bound=[[1.0, 0.0]]),
            InterconnectionLink(source=0, target=2, gain=[[0.1]], bound=[[1.0, 0.0]]),
        )
        system = InterconnectedSystem(subsystems=subs, links=links)
        w0 = coupling_matrix(system, 0)
        assert np.allclose(w0, [[2.0, 0.0], [0.0, 0.0]])
        report = validate_system(system)
        assert any("W_i not positive definite" in issue.message for issue in report.issues)

    def test_matches_gram_oracle(self):
        rng = np.random.default_rng(11)
        system, _, _ = fixtures.random_system(7, n_subsystems=3, max_state_dim=3)
        for i in range(3):
            acc = np.zeros((system.subsystems[i].state_dim,) * 2)
            for j in range(3):
                if j == i:
                    continue
                w = system.bound(j, i)
                acc += w.T @ w
            got = coupling_matrix(system, i)
            assert np.allclose(got, acc, atol=1e-14)
            assert np.allclose(got, got.T, atol=1e-14)
            assert np.linalg.eigvalsh(got).min() >= -1e-12


class TestValidation:
    def test_two_scalar_ok(self):
        subs = (scalar_subsystem(0, [-1.0]), scalar_subsystem(1, [-1.0]))
        links = (
            InterconnectionLink(source=1, target=0, gain=[[0.0]], bound=[[1.0]]),
            InterconnectionLink(source=0, target=1, gain=[[0.0]], bound=[[1.0]]),
        )
        system = InterconnectedSystem(subsystems=subs, links=links)
        report = validate_system(system)
        assert report.ok

    def test_single_subsystem_fails_coupling(self):
        system = InterconnectedSystem(subsystems=(scalar_subsystem(0, [-1.0]),), links=())
        report = validate_system(system)
        assert not report.ok
        assert any("W_i not positive definite" in i.message for i in report.issues)

    def test_reliability_flag_is_separate(self):
        system, _, failures = fixtures.demo_system()
        cost = CostSpec(Q=([[0.5]], [[0.5]]), R=([[2.0]], [[2.0]]))
        report = validate_system(system, cost, failures)
        assert report.stability_ok
        assert not report.reliable_ok
        flagged = [i for i in report.issues if i.code == "reliable-weight-bound"]
        assert flagged and all(i.blocks_reliable_only for i in flagged)
        assert "stability-only synthesis still possible" in flagged[0].message

    def test_failure_signs(self):
        system, cost, _ = fixtures.demo_system()
        failures = FailureModel(lam=([0.0], [1.0]), gamma=([0.5], [-0.1]))
        report = validate_system(system, cost, failures)
        codes = {i.code for i in report.issues}
        assert "failure-lambda" in codes and "failure-gamma" in codes

    def test_validation_never_raises(self):
        system = InterconnectedSystem(subsystems=(scalar_subsystem(0, [-1.0]),), links=())
        cost = CostSpec(Q=([[0.0]],), R=([[-1.0]],))
        failures = FailureModel(lam=([0.0],), gamma=([0.0],))
        report = validate_system(system, cost, failures)
        assert not report.ok


class TestConstruction:
    def test_link_shape_checked(self):
        subs = (scalar_subsystem(0, [-1.0]), scalar_subsystem(1, [-1.0]))
        with pytest.raises(ModelError):
            InterconnectedSystem(
                subsystems=subs,
                links=(InterconnectionLink(source=1, target=0, gain=[[0.1, 0.2]], bound=[[1.0]]),),
            )

    def test_vertex_count_must_match(self):
        subs = (scalar_subsystem(0, [-1.0, -2.0]), scalar_subsystem(1, [-1.0]))
        with pytest.raises(ModelError):
            InterconnectedSystem(subsystems=subs, links=())

    def test_no_self_links(self):
        with pytest.raises(ModelError):
            InterconnectionLink(source=0, target=0, gain=[[1.0]], bound=[[1.0]])

    def test_absent_pair_reads_zero(self):
        subs = (scalar_subsystem(0, [-1.0]), scalar_subsystem(1, [-1.0]))
        links = (InterconnectionLink(source=0, target=1, gain=[[0.1]], bound=[[1.0]]),)
        system = InterconnectedSystem(subsystems=subs, links=links)
        assert np.array_equal(system.gain(0, 1), [[0.0]])
        assert np.array_equal(system.bound(0, 1), [[0.0]])


class TestJsonIo:
    def test_round_trip(self, tmp_path):
        system, cost, failures = fixtures.demo_system()
        path = tmp_path / "system.json"
        save_system(path, system, cost, failures)
        loaded_system, loaded_cost, loaded_failures = load_system(path)
        assert loaded_system.n_subsystems == system.n_subsystems
        for i in range(2):
            for k in range(2):
                assert np.allclose(
                    loaded_system.subsystems[i].vertex_a[k], system.subsystems[i].vertex_a[k]
                )
            assert np.allclose(loaded_cost.Q[i], cost.Q[i])
            assert np.allclose(loaded_failures.gamma[i], failures.gamma[i])
        assert np.allclose(loaded_system.bound(0, 1), system.bound(0, 1))

    def test_optional_sections(self):
        system, _, _ = fixtures.demo_system()
        data = system_to_dict(system)
        loaded, cost, failures = system_from_dict(data)
        assert cost is None and failures is None
        assert loaded.vertex_count == 2

    def test_malformed_raises(self):
        with pytest.raises(ModelError):
            system_from_dict({"subsystems": [{"state_dim": 1}]})

    def test_json_serializable(self):
        system, cost, failures = fixtures.demo_system()
        json.dumps(system_to_dict(system, cost, failures))
