"""Controller synthesis: solve the per-subsystem vertex LMI families and recover
decentralized gains, polytopic Lyapunov certificates, and cost bounds.

Every subsystem is an independent problem (safe to run concurrently); results
are merged by subsystem index.  Feasibility is established by margin
minimization; stabilization (and trace-optimized reliable) designs are then
re-solved at a fixed fraction of the achieved margin under a scale-pinning
objective, which removes the degenerate directions a pure margin objective
leaves open.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lmi as lmi_mod
from . import sdp
from .lmi import AffineLmi, AssumptionViolation, LmiTerm, VarSpec, build_trace_epigraph
from .model import CostSpec, FailureModel, InterconnectedSystem, SimplexPoint, validate_system

MODE_STABILITY = "stability"
MODE_RELIABLE = "reliable"


class ValidationFailure(ValueError):
    """Structural assumptions do not hold; synthesis refused."""

    def __init__(self, report):
        super().__init__(f"validation failed:\n{report.summary()}")
        self.report = report


@dataclass
class SynthesisOptions:
    epsilon: float = lmi_mod.DEFAULT_EPSILON
    parameter_independent: bool = False
    optimize_trace: bool = False
    margin_fraction: float = 0.5
    solver: sdp.SolverOptions = field(default_factory=sdp.SolverOptions)


@dataclass(frozen=True, eq=False)
class SubsystemDesign:
    """Outcome of one subsystem's synthesis."""

    index: int
    feasible: bool
    gain: np.ndarray = None
    lyapunov_vertices: tuple = None     # Y_ik
    lyapunov_inverses: tuple = None     # X_ik = Y_ik^-1
    slack: np.ndarray = None            # V_i
    gain_surrogate: np.ndarray = None   # N_i
    margin: float = None                # achieved feasibility margin (-t*)
    residuals: dict = None
    diagnostics: dict = None


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    mode: str
    designs: tuple
    vertex_count: int
    state_dims: tuple
    input_dims: tuple
    options: dict

    @property
    def feasible(self) -> bool:
        return all(d.feasible for d in self.designs)

    @property
    def infeasible_subsystems(self) -> tuple:
        return tuple(d.index for d in self.designs if not d.feasible)

    def design(self, i: int) -> SubsystemDesign:
        return self.designs[i]

    def gains(self) -> tuple:
        return tuple(d.gain for d in self.designs)

    def lyapunov_at(self, i: int, alpha) -> np.ndarray:
        """Certificate Lyapunov matrix X_i(a) = (sum_k a_k Y_ik)^-1.

        At simplex vertices this equals Y_ik^-1 exactly; in the interior it is
        the interpolation the vertex construction actually certifies.
        """
        d = self.designs[i]
        if not d.feasible:
            raise ValueError(f"subsystem {i} has no feasible design")
        w = SimplexPoint.coerce(alpha).alpha
        if w.size != self.vertex_count:
            raise ValueError(f"expected {self.vertex_count} weights, got {w.size}")
        y = sum(w[k] * d.lyapunov_vertices[k] for k in range(w.size))
        x = np.linalg.inv(y)
        return (x + x.T) / 2.0

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "vertex_count": self.vertex_count,
            "state_dims": list(self.state_dims),
            "input_dims": list(self.input_dims),
            "options": self.options,
            "designs": [
                {
                    "index": d.index,
                    "feasible": d.feasible,
                    "gain": None if d.gain is None else d.gain.tolist(),
                    "lyapunov_vertices": None
                    if d.lyapunov_vertices is None
                    else [y.tolist() for y in d.lyapunov_vertices],
                    "lyapunov_inverses": None
                    if d.lyapunov_inverses is None
                    else [x.tolist() for x in d.lyapunov_inverses],
                    "slack": None if d.slack is None else d.slack.tolist(),
                    "gain_surrogate": None
                    if d.gain_surrogate is None
                    else d.gain_surrogate.tolist(),
                    "margin": d.margin,
                    "residuals": d.residuals,
                    "diagnostics": d.diagnostics,
                }
                for d in self.designs
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SynthesisResult":
        designs = []
        for entry in data["designs"]:
            designs.append(
                SubsystemDesign(
                    index=int(entry["index"]),
                    feasible=bool(entry["feasible"]),
                    gain=None if entry["gain"] is None else np.asarray(entry["gain"], float),
                    lyapunov_vertices=None
                    if entry["lyapunov_vertices"] is None
                    else tuple(np.asarray(y, float) for y in entry["lyapunov_vertices"]),
                    lyapunov_inverses=None
                    if entry["lyapunov_inverses"] is None
                    else tuple(np.asarray(x, float) for x in entry["lyapunov_inverses"]),
                    slack=None if entry["slack"] is None else np.asarray(entry["slack"], float),
                    gain_surrogate=None
                    if entry["gain_surrogate"] is None
                    else np.asarray(entry["gain_surrogate"], float),
                    margin=entry["margin"],
                    residuals=entry["residuals"],
                    diagnostics=entry["diagnostics"],
                )
            )
        return cls(
            mode=data["mode"],
            designs=tuple(designs),
            vertex_count=int(data["vertex_count"]),
            state_dims=tuple(data["state_dims"]),
            input_dims=tuple(data["input_dims"]),
            options=data["options"],
        )


def save_result(result: SynthesisResult, path, metadata: dict = None) -> None:
    payload = {"metadata": metadata or {}, "result": result.to_dict()}
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_result(path):
    with open(Path(path), "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return SynthesisResult.from_dict(payload["result"]), payload.get("metadata", {})


# ---------------------------------------------------------------------------


def _trace_objective(y_vars, n: int):
    eye = np.eye(n)
    return tuple((name, eye) for name in dict.fromkeys(y_vars))


def _trace_row(z_var: str, size: int, bound_var: str) -> AffineLmi:
    """Scalar constraint tr(Z) - s <= 0 as a 1x1 inequality."""
    terms = [
        LmiTerm(var=z_var, left=np.eye(size)[d : d + 1, :], right=np.eye(size)[:, d : d + 1], row=0, col=0)
        for d in range(size)
    ]
    terms.append(LmiTerm(var=bound_var, left=[[-1.0]], right=[[1.0]], row=0, col=0))
    return AffineLmi(
        name=f"trace-bound[{z_var}]",
        block_sizes=(1,),
        constant=np.zeros((1, 1)),
        terms=tuple(terms),
        epsilon=0.0,
    )


def _recover(family, solution):
    v = solution.assignment[family.slack_var]
    if family.gain_var is not None:
        n_mat = solution.assignment[family.gain_var]
    else:
        n_mat = np.zeros((0, v.shape[0]))
    # K V = N; -(V + V^T) < 0 in any feasible point guarantees V invertible
    if family.gain_var is not None:
        k_gain = np.linalg.solve(v.T, n_mat.T).T
    else:
        sub_inputs = 0
        k_gain = np.zeros((sub_inputs, v.shape[0]))
    ys = tuple(solution.assignment[name] for name in family.y_vars)
    xs = []
    for y in ys:
        x = np.linalg.inv(y)
        xs.append((x + x.T) / 2.0)
    return k_gain, v, n_mat, ys, tuple(xs)


def _synthesize_subsystem(family, options: SynthesisOptions, scale_pin: bool):
    """Phase 1: margin minimization.  Phase 2 (optional): re-solve at a fixed
    fraction of the achieved margin with a scale-pinning objective."""
    constraints = family.all_constraints()
    problem = sdp.SdpProblem(variables=family.variables, constraints=constraints)
    sol1 = sdp.solve(problem, options.solver)
    diagnostics = {"phase1": dict(sol1.diagnostics)}
    if sol1.status != sdp.FEASIBLE:
        return None, sol1, diagnostics

    margin = -float(sol1.diagnostics["t_value"])
    final = sol1
    if scale_pin:
        target = max(family.epsilon, options.margin_fraction * margin)
        tightened = tuple(
            dataclasses.replace(c, epsilon=target) for c in constraints
        )
        n = family.variables[0].shape[0]
        prob2 = sdp.SdpProblem(
            variables=family.variables,
            constraints=tightened,
            objective=_trace_objective(family.y_vars, n),
        )
        sol2 = sdp.solve(prob2, options.solver)
        diagnostics["phase2"] = dict(sol2.diagnostics)
        if sol2.status == sdp.FEASIBLE:
            final = sol2
        else:
            diagnostics["phase2"]["fallback"] = "phase-1 assignment retained"
    return margin, final, diagnostics


def _optimize_trace_subsystem(family, options: SynthesisOptions, margin: float):
    """Add epigraph variables Z_k >= Y_k^-1 and minimize their worst trace."""
    n = family.variables[0].shape[0]
    target = max(family.epsilon, options.margin_fraction * margin)
    constraints = [dataclasses.replace(c, epsilon=target) for c in family.all_constraints()]
    variables = list(family.variables)
    bound_var = "s"
    variables.append(VarSpec(bound_var, (1, 1), "general"))
    z_names = []
    for name in dict.fromkeys(family.y_vars):
        z_name = f"Z{name[1:]}" if len(name) > 1 else "Z"
        z_names.append(z_name)
        variables.append(VarSpec(z_name, (n, n), "spd"))
        constraints.append(build_trace_epigraph(name, z_name, n))
        constraints.append(_trace_row(z_name, n, bound_var))
    problem = sdp.SdpProblem(
        variables=tuple(variables),
        constraints=tuple(constraints),
        objective=((bound_var, np.array([[1.0]])),),
    )
    return sdp.solve(problem, options.solver)


def _build_result(system, mode, designs, options: SynthesisOptions) -> SynthesisResult:
    return SynthesisResult(
        mode=mode,
        designs=tuple(designs),
        vertex_count=system.vertex_count,
        state_dims=tuple(s.state_dim for s in system.subsystems),
        input_dims=tuple(s.input_dim for s in system.subsystems),
        options={
            "epsilon": options.epsilon,
            "parameter_independent": options.parameter_independent,
            "optimize_trace": options.optimize_trace,
            "margin_fraction": options.margin_fraction,
            "backend": options.solver.backend,
            "tolerance": options.solver.tolerance,
        },
    )


def synthesize_stabilizing(
    system: InterconnectedSystem,
    *,
    options: SynthesisOptions = None,
    fix_gain_zero: bool = False,
) -> SynthesisResult:
    """Solve the stabilization vertex LMI families for every subsystem.

    Infeasibility of one subsystem is recorded in its design entry and does
    not abort the others.
    """
    options = options or SynthesisOptions()
    report = validate_system(system)
    if not report.stability_ok:
        raise ValidationFailure(report)

    designs = []
    for i in range(system.n_subsystems):
        family = lmi_mod.build_stability_lmis(
            system,
            i,
            epsilon=options.epsilon,
            parameter_independent=options.parameter_independent,
            fix_gain_zero=fix_gain_zero,
        )
        margin, sol, diagnostics = _synthesize_subsystem(family, options, scale_pin=True)
        if margin is None:
            designs.append(
                SubsystemDesign(
                    index=i,
                    feasible=False,
                    residuals=sol.residuals,
                    diagnostics={**diagnostics, "status": sol.status},
                )
            )
            continue
        k_gain, v, n_mat, ys, xs = _recover(family, sol)
        if fix_gain_zero:
            k_gain = np.zeros((system.subsystems[i].input_dim, system.subsystems[i].state_dim))
        designs.append(
            SubsystemDesign(
                index=i,
                feasible=True,
                gain=k_gain,
                lyapunov_vertices=ys,
                lyapunov_inverses=xs,
                slack=v,
                gain_surrogate=n_mat if family.gain_var is not None else np.zeros_like(k_gain),
                margin=margin,
                residuals=sol.residuals,
                diagnostics=diagnostics,
            )
        )
    return _build_result(system, MODE_STABILITY, designs, options)


def synthesize_reliable_gcc(
    system: InterconnectedSystem,
    cost: CostSpec,
    failures: FailureModel,
    *,
    options: SynthesisOptions = None,
) -> SynthesisResult:
    """Reliable guaranteed-cost synthesis for every subsystem.

    Requires the reliability restriction R_i - I < 0; violations raise
    AssumptionViolation before any solving happens.
    """
    options = options or SynthesisOptions()
    report = validate_system(system, cost, failures)
    if not report.stability_ok:
        raise ValidationFailure(report)
    for issue in report.issues:
        if issue.code == "reliable-weight-bound":
            raise AssumptionViolation(
                3,
                f"{issue.where}: {issue.message} (admitting failures restricts the "
                "control weighting matrices; relax R or use stability mode)",
            )
        if issue.blocks_reliable_only:
            raise ValidationFailure(report)

    designs = []
    for i in range(system.n_subsystems):
        family = lmi_mod.build_reliable_lmis(
            system,
            cost,
            failures,
            i,
            epsilon=options.epsilon,
            parameter_independent=options.parameter_independent,
        )
        margin, sol, diagnostics = _synthesize_subsystem(family, options, scale_pin=False)
        if margin is None:
            designs.append(
                SubsystemDesign(
                    index=i,
                    feasible=False,
                    residuals=sol.residuals,
                    diagnostics={**diagnostics, "status": sol.status},
                )
            )
            continue
        final = sol
        if options.optimize_trace:
            sol3 = _optimize_trace_subsystem(family, options, margin)
            diagnostics["trace_phase"] = dict(sol3.diagnostics)
            if sol3.status == sdp.FEASIBLE:
                final = sol3
                diagnostics["trace_phase"]["objective"] = sol3.objective_value
            else:
                diagnostics["trace_phase"]["fallback"] = "feasibility assignment retained"
        k_gain, v, n_mat, ys, xs = _recover(family, final)
        designs.append(
            SubsystemDesign(
                index=i,
                feasible=True,
                gain=k_gain,
                lyapunov_vertices=ys,
                lyapunov_inverses=xs,
                slack=v,
                gain_surrogate=n_mat,
                margin=margin,
                residuals=final.residuals,
                diagnostics=diagnostics,
            )
        )
    return _build_result(system, MODE_RELIABLE, designs, options)


# ---------------------------------------------------------------------------
# Cost bounds


def _split_initial_state(result: SynthesisResult, x0) -> list:
    if isinstance(x0, (list, tuple)) and all(np.asarray(p).ndim >= 1 for p in x0):
        parts = [np.asarray(p, float).reshape(-1) for p in x0]
    else:
        flat = np.asarray(x0, float).reshape(-1)
        total = sum(result.state_dims)
        if flat.size != total:
            raise ValueError(f"initial state has {flat.size} entries, expected {total}")
        parts = []
        pos = 0
        for n in result.state_dims:
            parts.append(flat[pos : pos + n])
            pos += n
    for i, (part, n) in enumerate(zip(parts, result.state_dims)):
        if part.size != n:
            raise ValueError(f"subsystem {i} initial state has {part.size} entries, expected {n}")
    return parts


def cost_bound_for_initial_state(result: SynthesisResult, x0) -> dict:
    """Certified cost bound for a concrete initial state.

    The parameter-dependent bound sum x0_i^T X_i(a) x0_i is maximized over the
    uncertainty simplex at a vertex, so the worst case is the max over the
    per-vertex values sum_i x0_i^T X_ik x0_i.
    """
    if result.mode != MODE_RELIABLE:
        raise ValueError("cost bounds require a reliable-mode result")
    if not result.feasible:
        raise ValueError(f"no feasible design for subsystems {result.infeasible_subsystems}")
    parts = _split_initial_state(result, x0)
    per_vertex = []
    for k in range(result.vertex_count):
        val = 0.0
        for i, d in enumerate(result.designs):
            val += float(parts[i] @ d.lyapunov_inverses[k] @ parts[i])
        per_vertex.append(val)
    return {"per_vertex": per_vertex, "worst_case": max(per_vertex)}


def expected_cost_bound(result: SynthesisResult) -> float:
    """Expected-cost bound for unit-covariance initial states: max_k sum_i tr(X_ik)."""
    if result.mode != MODE_RELIABLE:
        raise ValueError("cost bounds require a reliable-mode result")
    if not result.feasible:
        raise ValueError(f"no feasible design for subsystems {result.infeasible_subsystems}")
    totals = [
        sum(float(np.trace(d.lyapunov_inverses[k])) for d in result.designs)
        for k in range(result.vertex_count)
    ]
    return max(totals)
