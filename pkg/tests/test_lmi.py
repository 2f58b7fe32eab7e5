import numpy as np
import pytest

from polygcc import fixtures
from polygcc.lmi import (
    AffineLmi,
    AssumptionViolation,
    LmiBuildError,
    LmiTerm,
    build_reliable_lmis,
    build_stability_lmis,
    build_trace_epigraph,
    reliable_blocks,
    stability_blocks,
    theorem1_primal,
    theorem1_slack_vertex,
)
from polygcc.model import CostSpec, FailureModel, InterconnectedSystem


def random_assignment(family, rng):
    out = {}
    for spec in family.variables:
        raw = rng.normal(size=spec.shape)
        if spec.kind == "spd":
            raw = raw @ raw.T + np.eye(spec.shape[0])
        out[spec.name] = raw
    return out


class TestTheorem1Primal:
    def test_scalar_example(self):
        m = theorem1_primal(
            a=[[-1.0]], b=[[0.0]], k_gain=[[0.0]], x=[[1.0]],
            gain=[[0.0]], c=[[1.0]], q11=[[-1.0]], q21=[[0.0]], q22=[[-1.0]],
        )
        expected = np.array([[-2.0, 0.0, 1.0], [0.0, -1.0, 0.0], [1.0, 0.0, -1.0]])
        assert np.allclose(m, expected)
        assert np.linalg.eigvalsh(m).max() < 0

    def test_decoupled_blocks(self):
        a = np.array([[-1.0, 0.2], [0.0, -2.0]])
        b = np.array([[1.0], [0.5]])
        k = np.array([[-0.5, -0.1]])
        x = np.eye(2)
        m = theorem1_primal(a, b, k, x, gain=np.zeros((2, 1)), c=np.zeros((1, 2)),
                            q11=[[-1.0]], q21=[[0.0]], q22=[[-1.0]])
        abar = a + b @ k
        assert np.allclose(m[:2, :2], abar.T + abar)
        assert np.allclose(m[2:, 2:], -np.eye(2))
        assert np.allclose(m[:2, 2:], 0)
        assert np.linalg.eigvalsh(m).max() < 0

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            n, s, g, c = 2, 1, 2, 2
            a = rng.normal(size=(n, n))
            b = rng.normal(size=(n, s))
            k = rng.normal(size=(s, n))
            raw = rng.normal(size=(n, n))
            x = raw @ raw.T + np.eye(n)
            gm = rng.normal(size=(n, g))
            cm = rng.normal(size=(c, n))
            q11 = rng.normal(size=(g, g)); q11 = (q11 + q11.T) / 2
            q21 = rng.normal(size=(c, g))
            q22 = rng.normal(size=(c, c)); q22 = (q22 + q22.T) / 2
            got = theorem1_primal(a, b, k, x, gm, cm, q11, q21, q22)
            abar = a + b @ k
            expected = np.block([
                [abar.T @ x + x @ abar, x @ gm, cm.T],
                [gm.T @ x, q11, q21.T],
                [cm, q21, q22],
            ])
            assert np.allclose(got, expected, atol=1e-13)

    def test_rejects_asymmetric_x(self):
        with pytest.raises(LmiBuildError):
            theorem1_primal(
                a=np.eye(2), b=np.ones((2, 1)), k_gain=np.ones((1, 2)),
                x=np.array([[1.0, 0.5], [0.4, 1.0]]),
                gain=np.zeros((2, 1)), c=np.zeros((1, 2)),
                q11=[[-1.0]], q21=[[0.0]], q22=[[-1.0]],
            )

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(LmiBuildError):
            theorem1_primal(
                a=np.eye(2), b=np.ones((2, 1)), k_gain=np.ones((1, 2)), x=np.eye(2),
                gain=np.zeros((3, 1)), c=np.zeros((1, 2)),
                q11=[[-1.0]], q21=[[0.0]], q22=[[-1.0]],
            )


class TestSlackVertex:
    def test_scalar_layout(self):
        main, aux = theorem1_slack_vertex(
            [[-1.0]], [[1.0]], [[0.1]], [[1.0]], [[-1.0]], [[0.0]], [[-1.0]]
        )
        assert main.block_sizes == (1, 1, 1, 1, 1)
        assert main.total_size == 5
        assert aux.block_sizes == (1, 1, 1)

    def test_assembly_matches_hand_build(self):
        rng = np.random.default_rng(6)
        n, s, g, c = 2, 1, 1, 2
        a = rng.normal(size=(n, n))
        b = rng.normal(size=(n, s))
        gm = rng.normal(size=(n, g))
        cm = rng.normal(size=(c, n))
        q11 = -np.eye(g) * 2
        q21 = 0.1 * rng.normal(size=(c, g))
        q22 = -(np.eye(c) + 0.5 * np.ones((c, c)))
        main, aux = theorem1_slack_vertex(a, b, gm, cm, q11, q21, q22, vertex=0)
        v = rng.normal(size=(n, n))
        nv = rng.normal(size=(s, n))
        raw = rng.normal(size=(n, n))
        y = raw @ raw.T + np.eye(n)
        got = main.assemble({"V": v, "N": nv, "Y0": y})
        zng = np.zeros((n, g))
        znc = np.zeros((n, c))
        znn = np.zeros((n, n))
        row2 = a @ v + y + b @ nv
        expected = np.block([
            [-(v + v.T), row2.T, zng, (cm @ v).T, v.T],
            [row2, -y, gm, znc, znn],
            [zng.T, gm.T, q11, q21.T, zng.T],
            [cm @ v, znc.T, q21, q22, znc.T],
            [v, znn, zng, znc, -y],
        ])
        assert np.allclose(got, expected, atol=1e-13)
        got_aux = aux.assemble({"Y0": y})
        expected_aux = np.block([
            [-y, gm, znc],
            [gm.T, q11, q21.T],
            [znc.T, q21, q22],
        ])
        assert np.allclose(got_aux, expected_aux, atol=1e-13)

    def test_substitution_identity(self):
        # with Y = V (symmetric), the coupling block reads A V + V + B N
        a = np.array([[-1.0]])
        b = np.array([[2.0]])
        main, _ = theorem1_slack_vertex(a, b, [[0.1]], [[1.0]], [[-1.0]], [[0.0]], [[-1.0]])
        v = np.array([[1.5]])
        nv = np.array([[0.3]])
        m = main.assemble({"V": v, "N": nv, "Y0": v})
        assert np.isclose(m[1, 0], (a @ v + v + b @ nv).item())

    def test_requires_negative_q(self):
        with pytest.raises(LmiBuildError):
            theorem1_slack_vertex(
                [[-1.0]], [[1.0]], [[0.1]], [[1.0]], [[1.0]], [[0.0]], [[-1.0]]
            )


class TestStabilityFamily:
    def test_sizes_and_sharing(self):
        system = fixtures.stability_demo_system()
        fam = build_stability_lmis(system, 0)
        assert len(fam.pairs) == 2
        main0, aux0 = fam.pairs[0]
        assert main0.total_size == 5  # 4n + (N-1) l = 4 + 1
        assert aux0.total_size == 2
        assert fam.y_vars == ("Y0", "Y1")
        for main, _ in fam.pairs:
            assert "V" in main.variable_names()
            assert "N" in main.variable_names()

    def test_full_aux_three_blocks(self):
        system = fixtures.stability_demo_system()
        fam = build_stability_lmis(system, 0, full_aux=True)
        assert fam.pairs[0][1].block_sizes == (1, 1, 1)

    def test_parameter_independent_aliases(self):
        system = fixtures.stability_demo_system()
        fam = build_stability_lmis(system, 0, parameter_independent=True)
        assert fam.y_vars == ("Y", "Y")
        names = [v.name for v in fam.variables]
        assert names.count("Y") == 1

    def test_q_block_negative(self):
        system = fixtures.stability_demo_system()
        blocks = stability_blocks(system, 0)
        assert blocks.q_negative_definite()

    def test_assumption2_violation(self):
        sub = fixtures.stability_demo_system().subsystems[0]
        lonely = InterconnectedSystem(subsystems=(sub,), links=())
        with pytest.raises(AssumptionViolation) as err:
            build_stability_lmis(lonely, 0)
        assert err.value.assumption == 2


class TestReliableFamily:
    def test_sizes(self):
        system, cost, failures = fixtures.demo_system()
        fam = build_reliable_lmis(system, cost, failures, 0)
        main, aux = fam.pairs[0]
        assert main.total_size == 10  # 5n + (N-1)l + 4s = 5 + 1 + 4
        assert main.block_sizes == (1, 1, 2, 2, 3, 1)
        assert aux.total_size == 3

    def test_bhat_scalar_identity(self):
        system, cost, failures = fixtures.demo_system()
        blocks = reliable_blocks(system, cost, failures, 0)
        r = 0.5
        for k, bk in enumerate(system.subsystems[0].vertex_b):
            assert np.allclose(blocks.bhat_vertices[k], bk / (1 - r), atol=1e-12)

    def test_resolvent_identity_random(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            s = rng.integers(1, 4)
            raw = rng.normal(size=(s, s))
            r = raw @ raw.T
            r *= 0.9 / max(1.0, np.linalg.eigvalsh(r).max())
            lhs = np.eye(s) + np.linalg.inv(np.eye(s) - r) @ r
            rhs = np.linalg.inv(np.eye(s) - r)
            assert np.allclose(lhs, rhs, atol=1e-10)

    def test_hand_assembly_nominal_failures(self):
        system, _, _ = fixtures.demo_system()
        cost = CostSpec(Q=([[0.5]], [[0.5]]), R=([[0.5]], [[0.5]]))
        failures = FailureModel(lam=([1.0], [1.0]), gamma=([0.0], [0.0]))
        blocks = reliable_blocks(system, cost, failures, 0)
        assert np.allclose(blocks.q11, np.diag([-1.0, -0.5]))
        assert np.allclose(blocks.q22, np.diag([-2.0, -4.0]))  # -1/Q, -1/W with W = 0.25
        assert np.allclose(blocks.q33, np.diag([-2.0, -1.0, -0.5]))
        assert np.allclose(blocks.f, [[1.0, 0.0, 0.5]])
        assert np.allclose(blocks.c, [[1.0], [1.0]])
        for k, bk in enumerate(system.subsystems[0].vertex_b):
            assert np.allclose(blocks.e_vertices[k], np.hstack([[[0.1]], bk]))
        assert blocks.q_negative_definite()

    def test_assumption3_violation(self):
        system, _, failures = fixtures.demo_system()
        cost = CostSpec(Q=([[0.5]], [[0.5]]), R=([[1.0]], [[1.0]]))
        with pytest.raises(AssumptionViolation) as err:
            build_reliable_lmis(system, cost, failures, 0)
        assert err.value.assumption == 3


class TestAffineLmiMechanics:
    def test_symmetry_property(self):
        rng = np.random.default_rng(9)
        system, cost, failures = fixtures.demo_system()
        families = [
            build_stability_lmis(fixtures.stability_demo_system(), 0),
            build_reliable_lmis(system, cost, failures, 0),
            build_reliable_lmis(system, cost, failures, 1),
        ]
        for fam in families:
            for lmi in fam.all_constraints():
                for _ in range(5):
                    m = lmi.assemble(random_assignment(fam, rng))
                    scale = max(1.0, np.abs(m).max())
                    assert np.abs(m - m.T).max() <= 1e-13 * scale

    def test_serialization_round_trip(self):
        system, cost, failures = fixtures.demo_system()
        fam = build_reliable_lmis(system, cost, failures, 0)
        rng = np.random.default_rng(10)
        assignment = random_assignment(fam, rng)
        for lmi in fam.all_constraints():
            clone = AffineLmi.from_dict(lmi.to_dict())
            assert clone.block_sizes == lmi.block_sizes
            assert np.allclose(clone.assemble(assignment), lmi.assemble(assignment), atol=1e-14)

    def test_rejects_upper_triangle_terms(self):
        with pytest.raises(LmiBuildError):
            AffineLmi(
                name="bad",
                block_sizes=(1, 1),
                constant=np.zeros((2, 2)),
                terms=(LmiTerm(var="X", left=[[1.0]], right=[[1.0]], row=0, col=1),),
            )

    def test_rejects_asymmetric_constant(self):
        with pytest.raises(LmiBuildError):
            AffineLmi(
                name="bad",
                block_sizes=(2,),
                constant=np.array([[0.0, 1.0], [0.0, 0.0]]),
                terms=(),
            )

    def test_missing_assignment_raises(self):
        lmi = AffineLmi(
            name="m", block_sizes=(1,), constant=np.zeros((1, 1)),
            terms=(LmiTerm(var="X", left=[[1.0]], right=[[1.0]], row=0, col=0),),
        )
        with pytest.raises(LmiBuildError):
            lmi.assemble({})


class TestTraceEpigraph:
    def test_identity_boundary(self):
        lmi = build_trace_epigraph("Y", "Z", 2)
        m = lmi.assemble({"Y": np.eye(2), "Z": np.eye(2)})
        assert np.linalg.eigvalsh(m).max() <= 1e-12  # satisfied with equality

    def test_psd_boundary_case(self):
        lmi = build_trace_epigraph("Y", "Z", 2)
        m = lmi.assemble({"Y": 2 * np.eye(2), "Z": 0.5 * np.eye(2)})
        # [[0.5 I, I], [I, 2 I]] is PSD with a zero eigenvalue
        eigs = np.linalg.eigvalsh(-m)
        assert eigs.min() >= -1e-12
        assert abs(eigs.min()) <= 1e-12

    def test_infeasible_sign(self):
        lmi = build_trace_epigraph("Y", "Z", 1)
        m = lmi.assemble({"Y": np.eye(1), "Z": np.zeros((1, 1))})
        assert np.linalg.eigvalsh(m).max() > 0
