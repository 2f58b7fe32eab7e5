"""Feasibility/optimization of affine matrix inequality systems over declared variables.

Feasibility is decided by minimizing a uniform margin t subject to
M_j(vars) <= t*I (shifted so every constraint's own strictness margin is
honored at t = -eps_max), with a configurable floor on t.  A problem with an
explicit linear objective instead enforces M_j(vars) <= -eps_j*I as hard
constraints.  Either way, the returned residuals are recomputed from the
assignment with a dense eigenvalue solve, never trusted from the backend.

The reference backend is the Clarabel interior-point solver driven through
its native cone API (PSD triangle cones); backends are pluggable through the
BACKENDS registry without touching synthesis code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .lmi import AffineLmi, VarSpec

_SQRT2 = np.sqrt(2.0)

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
INCONCLUSIVE = "inconclusive"


class SdpError(ValueError):
    """Malformed problem: undeclared variables, inconsistent shapes, bad weights."""


@dataclass
class SolverOptions:
    tolerance: float = 1e-8
    max_iterations: int = 500
    backend: str = "clarabel"
    margin_floor: float = 10.0
    pd_floor: float = 1e-9


@dataclass(frozen=True, eq=False)
class SdpProblem:
    """Declared variables, AffineLmi constraints, and an optional trace objective.

    objective entries are (variable_name, weight) pairs meaning
    sum tr(weight^T @ Var); weights on spd variables must be symmetric.
    """

    variables: tuple
    constraints: tuple
    objective: tuple = None

    def __post_init__(self):
        declared = {}
        for spec in self.variables:
            if spec.name in declared:
                raise SdpError(f"variable {spec.name!r} declared twice")
            declared[spec.name] = spec
        for lmi in self.constraints:
            for term in lmi.terms:
                spec = declared.get(term.var)
                if spec is None:
                    raise SdpError(f"constraint {lmi.name}: undeclared variable {term.var!r}")
                rows, cols = spec.shape
                erows, ecols = (cols, rows) if term.transpose else (rows, cols)
                if term.left.shape[1] != erows or term.right.shape[0] != ecols:
                    raise SdpError(
                        f"constraint {lmi.name}: term for {term.var} has coefficient shapes "
                        f"{term.left.shape}, {term.right.shape} inconsistent with variable "
                        f"shape {spec.shape}"
                    )
        if self.objective is not None:
            for name, weight in self.objective:
                spec = declared.get(name)
                if spec is None:
                    raise SdpError(f"objective references undeclared variable {name!r}")
                w = np.asarray(weight, float)
                if w.shape != spec.shape:
                    raise SdpError(f"objective weight for {name} has shape {w.shape} != {spec.shape}")
                if spec.kind == "spd" and not np.allclose(w, w.T, atol=1e-12):
                    raise SdpError(f"objective weight for spd variable {name} must be symmetric")
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.objective is not None:
            object.__setattr__(
                self,
                "objective",
                tuple((name, np.asarray(w, float)) for name, w in self.objective),
            )

    def var_map(self) -> dict:
        return {spec.name: spec for spec in self.variables}

    def to_dict(self) -> dict:
        return {
            "variables": [
                {"name": v.name, "shape": list(v.shape), "kind": v.kind} for v in self.variables
            ],
            "constraints": [c.to_dict() for c in self.constraints],
            "objective": None
            if self.objective is None
            else [[name, w.tolist()] for name, w in self.objective],
        }


@dataclass
class SdpSolution:
    status: str
    assignment: dict
    max_residual: float = None
    objective_value: float = None
    residuals: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE


# ---------------------------------------------------------------------------
# Variable vectorization


def _tri_indices(d: int):
    """Column-wise upper-triangle index pairs, Clarabel's PSD triangle order."""
    return [(r, c) for c in range(d) for r in range(c + 1)]


def _svec(mat: np.ndarray) -> np.ndarray:
    d = mat.shape[0]
    out = np.empty(d * (d + 1) // 2)
    for pos, (r, c) in enumerate(_tri_indices(d)):
        out[pos] = mat[r, c] * (_SQRT2 if r != c else 1.0)
    return out


class _VarIndex:
    """Maps every scalar decision parameter to a column and back to matrices."""

    def __init__(self, variables):
        self.specs = tuple(variables)
        self.spec_map = {spec.name: spec for spec in self.specs}
        self.offsets = {}
        self.param_basis = {}  # name -> list of (a, b) entry pairs
        pos = 0
        for spec in self.specs:
            rows, cols = spec.shape
            if spec.kind == "spd":
                pairs = [(r, c) for c in range(cols) for r in range(c + 1)]
            else:
                pairs = [(r, c) for r in range(rows) for c in range(cols)]
            self.offsets[spec.name] = pos
            self.param_basis[spec.name] = pairs
            pos += len(pairs)
        self.n_params = pos

    def unpack(self, x: np.ndarray) -> dict:
        out = {}
        for spec in self.specs:
            rows, cols = spec.shape
            mat = np.zeros((rows, cols))
            base = self.offsets[spec.name]
            for k, (a, b) in enumerate(self.param_basis[spec.name]):
                v = x[base + k]
                mat[a, b] = v
                if spec.kind == "spd" and a != b:
                    mat[b, a] = v
            out[spec.name] = mat
        return out


def _constraint_rows(lmi: AffineLmi, index: _VarIndex, extra_cols: int):
    """Svec coefficient block for one constraint: (A_block, b_base) with
    s = b - A x = svec(-M(x) - shift) handled by the caller via b adjustments."""
    d = lmi.total_size
    tri = _tri_indices(d)
    m = len(tri)
    rows_idx = np.array([t[0] for t in tri])
    cols_idx = np.array([t[1] for t in tri])
    scale = np.where(rows_idx != cols_idx, _SQRT2, 1.0)

    a_block = np.zeros((m, index.n_params + extra_cols))
    offs = lmi._offsets
    for term in lmi.terms:
        base = index.offsets[term.var]
        spec = index.spec_map[term.var]
        pairs = index.param_basis[term.var]
        r0 = offs[term.row]
        c0 = offs[term.col]
        left, right = term.left, term.right
        for k, (a, b) in enumerate(pairs):
            dm = np.zeros((d, d))
            if spec.kind == "spd":
                entries = [(a, b)] if a == b else [(a, b), (b, a)]
            else:
                entries = [(a, b)]
            for (ea, eb) in entries:
                ra, cb = (eb, ea) if term.transpose else (ea, eb)
                block = np.outer(left[:, ra], right[cb, :])
                dm[r0 : r0 + block.shape[0], c0 : c0 + block.shape[1]] += block
                if term.row != term.col:
                    dm[c0 : c0 + block.shape[1], r0 : r0 + block.shape[0]] += block.T
            # s = svec(shift - M(x)):  A column gets +svec(dM)
            a_block[:, base + k] += dm[rows_idx, cols_idx] * scale
    b_base = -(lmi.constant[rows_idx, cols_idx] * scale)
    return a_block, b_base


def _objective_vector(problem: SdpProblem, index: _VarIndex, extra_cols: int) -> np.ndarray:
    q = np.zeros(index.n_params + extra_cols)
    if problem.objective is None:
        return q
    varmap = problem.var_map()
    for name, weight in problem.objective:
        base = index.offsets[name]
        spec = varmap[name]
        for k, (a, b) in enumerate(index.param_basis[name]):
            if spec.kind == "spd" and a != b:
                q[base + k] += 2.0 * weight[a, b]
            else:
                q[base + k] += weight[a, b]
    return q


def _solve_clarabel(problem: SdpProblem, options: SolverOptions):
    import clarabel

    index = _VarIndex(problem.variables)
    feas_mode = problem.objective is None
    extra = 1 if feas_mode else 0
    t_col = index.n_params if feas_mode else None

    eps_values = [lmi.epsilon for lmi in problem.constraints]
    eps_max = max(eps_values) if eps_values else 0.0
    scale = 1.0
    for lmi in problem.constraints:
        if lmi.constant.size:
            scale = max(scale, float(np.abs(lmi.constant).max()))

    a_blocks = []
    b_parts = []
    cones = []
    for lmi in problem.constraints:
        a_block, b_base = _constraint_rows(lmi, index, extra)
        d = lmi.total_size
        eye_sv = _svec(np.eye(d))
        if feas_mode:
            # M(x) <= t*I + (eps_max - eps_j)*I
            a_block[:, t_col] -= eye_sv
            b_base = b_base + (eps_max - lmi.epsilon) * eye_sv
        else:
            b_base = b_base - lmi.epsilon * eye_sv
        a_blocks.append(a_block)
        b_parts.append(b_base)
        cones.append(clarabel.PSDTriangleConeT(d))

    # strict-positivity floor for spd-kind variables
    for spec in problem.variables:
        if spec.kind != "spd":
            continue
        d = spec.shape[0]
        tri = _tri_indices(d)
        block = np.zeros((len(tri), index.n_params + extra))
        base = index.offsets[spec.name]
        for k, (a, b) in enumerate(index.param_basis[spec.name]):
            pos = tri.index((a, b))
            block[pos, base + k] = -(_SQRT2 if a != b else 1.0)
        a_blocks.append(block)
        b_parts.append(-options.pd_floor * _svec(np.eye(d)))
        cones.append(clarabel.PSDTriangleConeT(d))

    t_floor = None
    if feas_mode:
        t_floor = options.margin_floor * max(scale, eps_max, 1.0)
        row = np.zeros((1, index.n_params + extra))
        row[0, t_col] = -1.0
        a_blocks.append(row)
        b_parts.append(np.array([t_floor]))
        cones.append(clarabel.NonnegativeConeT(1))

    n_cols = index.n_params + extra
    a_mat = sparse.csc_matrix(np.vstack(a_blocks)) if a_blocks else sparse.csc_matrix((0, n_cols))
    b_vec = np.concatenate(b_parts) if b_parts else np.zeros(0)
    q = _objective_vector(problem, index, extra)
    if feas_mode:
        q[t_col] = 1.0
    p_mat = sparse.csc_matrix((n_cols, n_cols))

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = int(options.max_iterations)
    settings.tol_gap_abs = options.tolerance
    settings.tol_gap_rel = options.tolerance
    settings.tol_feas = options.tolerance

    solver = clarabel.DefaultSolver(p_mat, q, a_mat, b_vec, cones, settings)
    sol = solver.solve()
    status = str(sol.status).split(".")[-1]
    x = np.asarray(sol.x, dtype=float) if sol.x is not None else None
    return index, status, x, (float(x[t_col]) if feas_mode and x is not None else None), t_floor


BACKENDS = {"clarabel": _solve_clarabel}


def solve(problem: SdpProblem, options: SolverOptions = None) -> SdpSolution:
    """Decide feasibility (or minimize the objective) and report honest residuals."""
    options = options or SolverOptions()
    backend = BACKENDS.get(options.backend)
    if backend is None:
        raise SdpError(f"unknown backend {options.backend!r} (available: {sorted(BACKENDS)})")

    try:
        index, raw_status, x, t_value, t_floor = backend(problem, options)
    except SdpError:
        raise
    except Exception as exc:  # backend breakdown is inconclusive, not infeasible
        return SdpSolution(
            status=INCONCLUSIVE,
            assignment={},
            diagnostics={"backend_error": f"{type(exc).__name__}: {exc}"},
        )

    diagnostics = {"backend": options.backend, "backend_status": raw_status, "t_value": t_value}
    if x is None:
        return SdpSolution(status=INCONCLUSIVE, assignment={}, diagnostics=diagnostics)

    assignment = index.unpack(x)
    residuals = {lmi.name: lmi.max_eig(assignment) for lmi in problem.constraints}
    max_residual = max(residuals.values()) if residuals else None
    diagnostics["t_floor"] = t_floor

    satisfied = all(
        residuals[lmi.name] <= -lmi.epsilon + options.tolerance for lmi in problem.constraints
    )
    spd_positive = all(
        float(np.linalg.eigvalsh((assignment[s.name] + assignment[s.name].T) / 2).min()) > 0
        for s in problem.variables
        if s.kind == "spd"
    )

    solved_like = raw_status in ("Solved", "AlmostSolved")
    objective_value = None
    if problem.objective is not None and solved_like:
        obj = 0.0
        for name, weight in problem.objective:
            obj += float(np.sum(weight * assignment[name]))
        objective_value = obj
    elif problem.objective is None:
        objective_value = t_value

    if solved_like and satisfied and spd_positive:
        return SdpSolution(
            status=FEASIBLE,
            assignment=assignment,
            max_residual=max_residual,
            objective_value=objective_value,
            residuals=residuals,
            diagnostics=diagnostics,
        )
    if solved_like and not satisfied:
        # the margin minimization certifies how far from feasible the system is
        diagnostics["violation"] = max(
            residuals[lmi.name] + lmi.epsilon for lmi in problem.constraints
        )
        return SdpSolution(
            status=INFEASIBLE,
            assignment=assignment,
            max_residual=max_residual,
            residuals=residuals,
            diagnostics=diagnostics,
        )
    if raw_status == "PrimalInfeasible":
        return SdpSolution(
            status=INFEASIBLE, assignment=assignment, max_residual=max_residual,
            residuals=residuals, diagnostics=diagnostics,
        )
    return SdpSolution(
        status=INCONCLUSIVE,
        assignment=assignment,
        max_residual=max_residual,
        residuals=residuals,
        diagnostics=diagnostics,
    )
