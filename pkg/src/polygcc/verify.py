"""A-posteriori verification: matrix-lemma oracles, slack-construction round trips,
and closed-loop certificate checks over parameter and failure grids.

Every check recomputes its quantity from raw matrices with dense eigenvalue
solves; nothing is trusted from the synthesis path.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from . import sdp
from .lmi import AffineLmi, LmiTerm, VarSpec, theorem1_primal, theorem1_slack_vertex
from .model import (
    CostSpec,
    FailureModel,
    InterconnectedSystem,
    SimplexPoint,
    coupling_matrix,
    evaluate_at_alpha,
    min_eig_margin,
)
from .synthesis import MODE_RELIABLE, SynthesisResult

NULLSPACE_RCOND = 1e-10


@dataclass(frozen=True)
class CheckRow:
    name: str
    point: str
    value: float
    passed: bool


@dataclass
class VerificationReport:
    checks: tuple
    vacuous: bool = False
    notes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.checks)

    def worst(self, prefix: str = "") -> float:
        vals = [row.value for row in self.checks if row.name.startswith(prefix)]
        return max(vals) if vals else float("-inf")

    def summary(self) -> dict:
        cats = {}
        for row in self.checks:
            cat = row.name.split("[")[0]
            cats.setdefault(cat, []).append(row.value)
        return {cat: max(vals) for cat, vals in cats.items()}

    def failures(self) -> tuple:
        return tuple(row for row in self.checks if not row.passed)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "vacuous": self.vacuous,
            "summary": self.summary(),
            "notes": self.notes,
            "checks": [
                {"name": r.name, "point": r.point, "value": r.value, "passed": r.passed}
                for r in self.checks
            ],
        }


def save_report(report: VerificationReport, path, metadata: dict = None) -> None:
    payload = {"metadata": metadata or {}, "report": report.to_dict()}
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sym_max_eig(mat: np.ndarray) -> float:
    return float(np.linalg.eigvalsh((mat + mat.T) / 2.0).max())


# ---------------------------------------------------------------------------
# Lemma oracles


def schur_oracle(mat, split: int, singular_rtol: float = 1e-12) -> dict:
    """Decide negativity of [[P1, P2], [P2^T, P3]] directly and via the complement.

    Returns direct (eigenvalue test on the whole matrix), via_complement
    (P3 < 0 and P1 - P2 P3^-1 P2^T < 0), and a singularity flag; the two
    booleans agree whenever P3 is nonsingular.
    """
    m = np.atleast_2d(np.asarray(mat, float))
    if m.shape[0] != m.shape[1] or not np.allclose(m, m.T, atol=1e-9 * max(1.0, np.abs(m).max())):
        raise ValueError("matrix must be symmetric")
    if not (0 < split < m.shape[0]):
        raise ValueError("split must cut the matrix into two nonempty blocks")
    p1 = m[:split, :split]
    p2 = m[:split, split:]
    p3 = m[split:, split:]
    direct = _sym_max_eig(m) < 0

    svals = np.linalg.svd(p3, compute_uv=False)
    singular = svals.min() <= singular_rtol * max(svals.max(), 1.0)
    if singular:
        return {"direct": direct, "via_complement": None, "p3_singular": True}
    p3_neg = _sym_max_eig(p3) < 0
    comp = p1 - p2 @ np.linalg.solve(p3, p2.T)
    via = bool(p3_neg and _sym_max_eig(comp) < 0)
    return {"direct": direct, "via_complement": via, "p3_singular": False}


def projection_oracle(
    psi, p, q, *, epsilon_scale: float = 1e-7, solver_options: sdp.SolverOptions = None
) -> dict:
    """Existence of X with Psi + P^T X^T Q + Q^T X P < 0 versus the null-space test.

    lhs is decided by a small feasibility solve; rhs evaluates
    Np^T Psi Np < 0 and Nq^T Psi Nq < 0 with numerically computed null-space
    bases (an empty basis makes the condition vacuously true).
    """
    psi = np.atleast_2d(np.asarray(psi, float))
    p = np.atleast_2d(np.asarray(p, float))
    q = np.atleast_2d(np.asarray(q, float))
    m = psi.shape[0]
    if psi.shape != (m, m) or not np.allclose(psi, psi.T, atol=1e-9 * max(1.0, np.abs(psi).max())):
        raise ValueError("Psi must be symmetric")
    if p.shape[1] != m or q.shape[1] != m:
        raise ValueError("P and Q must have as many columns as Psi")

    flags = []
    margins = {}

    def null_condition(mat, label):
        basis = scipy.linalg.null_space(mat, rcond=NULLSPACE_RCOND)
        svals = np.linalg.svd(mat, compute_uv=False)
        if svals.size and svals.max() > 0:
            rel = svals / svals.max()
            if ((rel > NULLSPACE_RCOND / 10) & (rel < NULLSPACE_RCOND * 10)).any():
                flags.append(f"null-space-borderline[{label}]")
        if basis.shape[1] == 0:
            margins[label] = float("-inf")
            return True
        val = _sym_max_eig(basis.T @ psi @ basis)
        margins[label] = val
        return val < 0

    rhs = null_condition(p, "P") and null_condition(q, "Q")

    scale = max(1.0, float(np.abs(psi).max()))
    eps = epsilon_scale * scale
    x_var = VarSpec("X", (q.shape[0], p.shape[0]), "general")
    constraint = AffineLmi(
        name="projection-existence",
        block_sizes=(m,),
        constant=psi,
        terms=(
            LmiTerm(var="X", left=p.T, right=q, row=0, col=0, transpose=True),
            LmiTerm(var="X", left=q.T, right=p, row=0, col=0, transpose=False),
        ),
        epsilon=eps,
    )
    problem = sdp.SdpProblem(variables=(x_var,), constraints=(constraint,))
    sol = sdp.solve(problem, solver_options or sdp.SolverOptions())
    lhs = sol.status == sdp.FEASIBLE
    return {
        "lhs": lhs,
        "rhs": rhs,
        "lhs_margin": sol.diagnostics.get("t_value"),
        "rhs_margins": margins,
        "flags": flags,
        "solver_status": sol.status,
    }


# ---------------------------------------------------------------------------
# Slack-construction round trip


@dataclass(frozen=True, eq=False)
class Theorem1Instance:
    """Generic closed-loop instance: vertex (A_k, B_k), coupling G, output C, Q blocks."""

    a_vertices: tuple
    b_vertices: tuple
    gain_map: np.ndarray
    c: np.ndarray
    q11: np.ndarray
    q21: np.ndarray
    q22: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "a_vertices", tuple(np.atleast_2d(np.asarray(a, float)) for a in self.a_vertices)
        )
        object.__setattr__(
            self, "b_vertices", tuple(np.atleast_2d(np.asarray(b, float)) for b in self.b_vertices)
        )
        for name in ("gain_map", "c", "q11", "q21", "q22"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), float)))
        if len(self.a_vertices) != len(self.b_vertices) or not self.a_vertices:
            raise ValueError("need matching nonempty vertex families")

    @property
    def vertex_count(self) -> int:
        return len(self.a_vertices)

    def q_full(self) -> np.ndarray:
        return np.block([[self.q11, self.q21.T], [self.q21, self.q22]])


def solve_slack_instance(instance: Theorem1Instance, *, epsilon: float = 1e-5,
                         solver_options: sdp.SolverOptions = None):
    """Solve the vertex slack inequalities; returns (K, Y list, assignment) or None."""
    if min_eig_margin(-instance.q_full()) <= 0:
        raise ValueError("aggregate Q block must be negative definite")
    n = instance.a_vertices[0].shape[0]
    s = instance.b_vertices[0].shape[1]
    scale = max(
        1.0,
        max(float(np.abs(m).max()) for m in (*instance.a_vertices, *instance.b_vertices,
                                             instance.gain_map, instance.c, instance.q_full())),
    )
    eps = epsilon * scale
    constraints = []
    for k in range(instance.vertex_count):
        main, aux = theorem1_slack_vertex(
            instance.a_vertices[k],
            instance.b_vertices[k],
            instance.gain_map,
            instance.c,
            instance.q11,
            instance.q21,
            instance.q22,
            vertex=k,
            epsilon=eps,
        )
        constraints += [main, aux]
    variables = [VarSpec("V", (n, n), "general"), VarSpec("N", (s, n), "general")]
    variables += [VarSpec(f"Y{k}", (n, n), "spd") for k in range(instance.vertex_count)]
    problem = sdp.SdpProblem(variables=tuple(variables), constraints=tuple(constraints))
    sol = sdp.solve(problem, solver_options or sdp.SolverOptions())
    if sol.status != sdp.FEASIBLE:
        return None
    v = sol.assignment["V"]
    k_gain = np.linalg.solve(v.T, sol.assignment["N"].T).T
    ys = [sol.assignment[f"Y{k}"] for k in range(instance.vertex_count)]
    return k_gain, ys, sol


def theorem1_roundtrip(
    instance: Theorem1Instance,
    *,
    n_interior: int = 50,
    seed: int = 0,
    epsilon: float = 1e-5,
    solver_options: sdp.SolverOptions = None,
) -> VerificationReport:
    """Solve the slack inequalities, recover K = N V^-1 and the vertex Lyapunov
    matrices, and check the primal inequality at every vertex plus seeded
    interior points.  Infeasible instances yield a vacuous (passing) report.
    """
    solved = solve_slack_instance(instance, epsilon=epsilon, solver_options=solver_options)
    if solved is None:
        return VerificationReport(checks=(), vacuous=True, notes={"reason": "instance infeasible"})
    k_gain, ys, _ = solved
    L = instance.vertex_count
    rng = np.random.default_rng(seed)
    rows = []
    literal_worst = float("-inf")

    def primal_eig_at(weights):
        w = np.asarray(weights, float)
        a = sum(w[k] * instance.a_vertices[k] for k in range(L))
        b = sum(w[k] * instance.b_vertices[k] for k in range(L))
        y = sum(w[k] * ys[k] for k in range(L))
        x = np.linalg.inv(y)
        x = (x + x.T) / 2.0
        m = theorem1_primal(a, b, k_gain, x, instance.gain_map, instance.c,
                            instance.q11, instance.q21, instance.q22)
        # literal affine combination of the vertex inverses, recorded for reference
        x_lit = sum(w[k] * np.linalg.inv(ys[k]) for k in range(L))
        m_lit = theorem1_primal(a, b, k_gain, (x_lit + x_lit.T) / 2.0, instance.gain_map,
                                instance.c, instance.q11, instance.q21, instance.q22)
        return _sym_max_eig(m), _sym_max_eig(m_lit)

    for k in range(L):
        val, lit = primal_eig_at(np.eye(L)[k])
        literal_worst = max(literal_worst, lit)
        rows.append(CheckRow(name="roundtrip-vertex", point=f"vertex {k}", value=val, passed=val < 0))
    for j in range(n_interior):
        w = rng.dirichlet(np.ones(L))
        val, lit = primal_eig_at(w)
        literal_worst = max(literal_worst, lit)
        rows.append(
            CheckRow(name="roundtrip-interior", point=f"sample {j}", value=val, passed=val < 0)
        )
    return VerificationReport(
        checks=tuple(rows),
        notes={"gain": k_gain.tolist(), "literal_vertex_inverse_combination_worst": literal_worst},
    )


# ---------------------------------------------------------------------------
# Closed-loop grid verification


@dataclass
class GridOptions:
    n_samples: int = 50
    seed: int = 2024


def simplex_grid(vertex_count: int, options: GridOptions):
    """Vertices, all pair midpoints, and seeded uniform interior samples."""
    pts = [(f"vertex {k}", np.eye(vertex_count)[k]) for k in range(vertex_count)]
    for k, m in itertools.combinations(range(vertex_count), 2):
        w = (np.eye(vertex_count)[k] + np.eye(vertex_count)[m]) / 2.0
        pts.append((f"mid({k},{m})", w))
    rng = np.random.default_rng(options.seed)
    for j in range(options.n_samples):
        pts.append((f"sample {j}", rng.dirichlet(np.ones(vertex_count))))
    return pts


def failure_extremes(failures: FailureModel, i: int):
    """Effective gain diagonals lambda + sigma*gamma over sigma in {-1,0,+1}^s."""
    lam = failures.lam[i]
    gam = failures.gamma[i]
    out = []
    for combo in itertools.product((-1.0, 0.0, 1.0), repeat=lam.size):
        sigma = np.asarray(combo)
        out.append((combo, lam + sigma * gam))
    return out


def reliable_certificate_matrix(
    system: InterconnectedSystem,
    cost: CostSpec,
    failures: FailureModel,
    i: int,
    alpha,
    x_i: np.ndarray,
    k_i: np.ndarray,
) -> np.ndarray:
    """The three-block reliability certificate for subsystem i at a parameter point.

    Layout: [[Xi, *, *], [G^T X, -I, *], [B^T X + R Lam K, 0, R - I]] with
    Xi = (A + B Lam K)^T X + X (A + B Lam K) + W + Q + K^T Gam^2 K + K^T Lam R Lam K.
    """
    a, b = evaluate_at_alpha(system.subsystems[i], alpha)
    lam = failures.Lambda(i)
    gam = failures.Gamma(i)
    q_i, r_i = cost.Q[i], cost.R[i]
    w_i = coupling_matrix(system, i)
    g_i = system.stacked_gain(i)
    s = system.subsystems[i].input_dim
    gl = g_i.shape[1]
    acl = a + b @ lam @ k_i
    xi = (
        acl.T @ x_i
        + x_i @ acl
        + w_i
        + q_i
        + k_i.T @ gam @ gam @ k_i
        + k_i.T @ lam @ r_i @ lam @ k_i
    )
    row3 = b.T @ x_i + r_i @ lam @ k_i
    return np.block(
        [
            [xi, x_i @ g_i, row3.T],
            [g_i.T @ x_i, -np.eye(gl), np.zeros((gl, s))],
            [row3, np.zeros((s, gl)), r_i - np.eye(s)],
        ]
    )


def envelope_matrix(
    system: InterconnectedSystem,
    cost: CostSpec,
    failures: FailureModel,
    i: int,
    alpha,
    x_i: np.ndarray,
    k_i: np.ndarray,
    effective_gain: np.ndarray,
) -> np.ndarray:
    """Objective-integrand quadratic form at one linear failure extreme.

    With the degradation pinned at u^F = diag(effective_gain) u the hedging row
    folds into the (1,1) block:
    [[(A + B Lt K)^T X + (*) + Q + W + K^T Lt R Lt K, X G], [G^T X, -I]].
    """
    a, b = evaluate_at_alpha(system.subsystems[i], alpha)
    lt = np.diag(effective_gain)
    q_i, r_i = cost.Q[i], cost.R[i]
    w_i = coupling_matrix(system, i)
    g_i = system.stacked_gain(i)
    gl = g_i.shape[1]
    acl = a + b @ lt @ k_i
    head = acl.T @ x_i + x_i @ acl + q_i + w_i + k_i.T @ lt @ r_i @ lt @ k_i
    return np.block([[head, x_i @ g_i], [g_i.T @ x_i, -np.eye(gl)]])


def stability_certificate_matrix(
    system: InterconnectedSystem, i: int, alpha, x_i: np.ndarray, k_i: np.ndarray
) -> np.ndarray:
    """Stabilization certificate [[(A+BK)^T X + (*), XG, I], [G^T X, -I, 0], [I, 0, -W^-1]]."""
    a, b = evaluate_at_alpha(system.subsystems[i], alpha)
    w_i = coupling_matrix(system, i)
    g_i = system.stacked_gain(i)
    n = system.subsystems[i].state_dim
    gl = g_i.shape[1]
    w_inv = np.linalg.inv(w_i)
    return np.block(
        [
            [ (a + b @ k_i).T @ x_i + x_i @ (a + b @ k_i), x_i @ g_i, np.eye(n)],
            [g_i.T @ x_i, -np.eye(gl), np.zeros((gl, n))],
            [np.eye(n), np.zeros((n, gl)), -(w_inv + w_inv.T) / 2.0],
        ]
    )


def spectral_abscissa(mat: np.ndarray) -> float:
    return float(np.linalg.eigvals(mat).real.max())


def verify_closed_loop(
    result: SynthesisResult,
    system: InterconnectedSystem,
    cost: CostSpec = None,
    failures: FailureModel = None,
    grids: GridOptions = None,
) -> VerificationReport:
    """Grid verification of a synthesis result.

    Reliable results: gain-recovery consistency, the nominal certificate at
    every grid parameter point, the envelope inequality and closed-loop
    spectral abscissa at every linear failure extreme.  Stability results skip
    the reliability checks and verify the stabilization certificate and
    closed-loop eigenvalues only.
    """
    grids = grids or GridOptions()
    rows = []
    notes = {}
    reliable = result.mode == MODE_RELIABLE
    if reliable and (cost is None or failures is None):
        raise ValueError("reliable verification needs the cost weights and failure model")

    if not result.feasible:
        notes["infeasible_subsystems"] = list(result.infeasible_subsystems)
        return VerificationReport(checks=(), vacuous=True, notes=notes)

    grid = simplex_grid(result.vertex_count, grids)
    for i, design in enumerate(result.designs):
        k_i = design.gain
        v = design.slack
        n_mat = design.gain_surrogate
        drift = float(np.linalg.norm(k_i @ v - n_mat))
        tol = 1e-9 * (1.0 + float(np.linalg.norm(n_mat)))
        rows.append(
            CheckRow(
                name="gain-recovery",
                point=f"subsystem {i}",
                value=drift,
                passed=drift <= tol,
            )
        )
        extremes = failure_extremes(failures, i) if reliable else [((), None)]
        for label, alpha in grid:
            x_i = result.lyapunov_at(i, alpha)
            if reliable:
                cert = reliable_certificate_matrix(system, cost, failures, i, alpha, x_i, k_i)
                val = _sym_max_eig(cert)
                rows.append(
                    CheckRow(
                        name="certificate",
                        point=f"subsystem {i}, {label}",
                        value=val,
                        passed=val < 0,
                    )
                )
                for combo, eff in extremes:
                    env = envelope_matrix(system, cost, failures, i, alpha, x_i, k_i, eff)
                    ev = _sym_max_eig(env)
                    rows.append(
                        CheckRow(
                            name="envelope",
                            point=f"subsystem {i}, {label}, sigma={combo}",
                            value=ev,
                            passed=ev < 0,
                        )
                    )
                    a, b = evaluate_at_alpha(system.subsystems[i], alpha)
                    sa = spectral_abscissa(a + b @ np.diag(eff) @ k_i)
                    rows.append(
                        CheckRow(
                            name="eigen",
                            point=f"subsystem {i}, {label}, sigma={combo}",
                            value=sa,
                            passed=sa < 0,
                        )
                    )
            else:
                cert = stability_certificate_matrix(system, i, alpha, x_i, k_i)
                val = _sym_max_eig(cert)
                rows.append(
                    CheckRow(
                        name="certificate",
                        point=f"subsystem {i}, {label}",
                        value=val,
                        passed=val < 0,
                    )
                )
                a, b = evaluate_at_alpha(system.subsystems[i], alpha)
                sa = spectral_abscissa(a + b @ k_i)
                rows.append(
                    CheckRow(
                        name="eigen", point=f"subsystem {i}, {label}", value=sa, passed=sa < 0
                    )
                )
    return VerificationReport(checks=tuple(rows), notes=notes)
