"""Block matrix inequalities, both as numeric assemblies and affine-in-variables objects.

An `AffineLmi` is the constraint  M(vars) <= -epsilon * I  where

    M(vars) = constant + sum_terms  L @ Var @ R   placed at a block position,
              mirrored transposed above the diagonal.

Terms are specified on or below the block diagonal only; diagonal placements
are added exactly as written (so -(V + V^T) is two terms, one with the
transpose flag), which keeps assembly symmetric for symmetric variable values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    CostSpec,
    FailureModel,
    InterconnectedSystem,
    coupling_matrix,
    is_positive_definite,
    min_eig_margin,
)

DEFAULT_EPSILON = 1e-6


class LmiBuildError(ValueError):
    """Inconsistent dimensions or malformed inequality structure."""


class AssumptionViolation(LmiBuildError):
    """A structural assumption required by the construction does not hold."""

    def __init__(self, assumption: int, message: str):
        super().__init__(message)
        self.assumption = assumption


@dataclass(frozen=True)
class VarSpec:
    """Declared decision variable: name, matrix shape, and cone kind."""

    name: str
    shape: tuple
    kind: str  # "spd" | "general"

    def __post_init__(self):
        if self.kind not in ("spd", "general"):
            raise LmiBuildError(f"unknown variable kind {self.kind!r}")
        if self.kind == "spd" and self.shape[0] != self.shape[1]:
            raise LmiBuildError(f"spd variable {self.name} must be square, got {self.shape}")


@dataclass(frozen=True, eq=False)
class LmiTerm:
    """One affine contribution left @ Var @ right at block (row, col), row >= col."""

    var: str
    left: np.ndarray
    right: np.ndarray
    row: int
    col: int
    transpose: bool = False

    def __post_init__(self):
        object.__setattr__(self, "left", np.atleast_2d(np.asarray(self.left, float)))
        object.__setattr__(self, "right", np.atleast_2d(np.asarray(self.right, float)))


@dataclass(frozen=True, eq=False)
class AffineLmi:
    """Symmetric block matrix, affine in named variables, constrained <= -epsilon*I."""

    name: str
    block_sizes: tuple
    constant: np.ndarray
    terms: tuple
    epsilon: float = 0.0

    def __post_init__(self):
        sizes = tuple(int(b) for b in self.block_sizes)
        total = sum(sizes)
        const = np.asarray(self.constant, dtype=float)
        if const.shape != (total, total):
            raise LmiBuildError(
                f"{self.name}: constant shape {const.shape} != layout total {(total, total)}"
            )
        if not np.allclose(const, const.T, atol=1e-12 * max(1.0, np.abs(const).max() if const.size else 1.0)):
            raise LmiBuildError(f"{self.name}: constant part must be symmetric")
        if self.epsilon < 0:
            raise LmiBuildError(f"{self.name}: strictness margin must be >= 0")
        offs = np.concatenate([[0], np.cumsum(sizes)])
        for t in self.terms:
            if not (0 <= t.col <= t.row < len(sizes)):
                raise LmiBuildError(f"{self.name}: term for {t.var} must sit on or below the diagonal")
            if t.left.shape[0] != sizes[t.row] or t.right.shape[1] != sizes[t.col]:
                raise LmiBuildError(
                    f"{self.name}: term for {t.var} at ({t.row}, {t.col}) has coefficient "
                    f"shapes {t.left.shape}, {t.right.shape}, block sizes "
                    f"{sizes[t.row]}x{sizes[t.col]}"
                )
        object.__setattr__(self, "block_sizes", sizes)
        object.__setattr__(self, "constant", const)
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(self, "_offsets", offs)

    @property
    def total_size(self) -> int:
        return int(self._offsets[-1])

    def variable_names(self) -> tuple:
        seen = []
        for t in self.terms:
            if t.var not in seen:
                seen.append(t.var)
        return tuple(seen)

    def assemble(self, assignment: dict) -> np.ndarray:
        """Evaluate the block matrix at a concrete assignment of every variable."""
        out = self.constant.copy()
        offs = self._offsets
        for t in self.terms:
            try:
                val = np.asarray(assignment[t.var], dtype=float)
            except KeyError:
                raise LmiBuildError(f"{self.name}: assignment missing variable {t.var!r}")
            eff = val.T if t.transpose else val
            contrib = t.left @ eff @ t.right
            r0, r1 = offs[t.row], offs[t.row + 1]
            c0, c1 = offs[t.col], offs[t.col + 1]
            out[r0:r1, c0:c1] += contrib
            if t.row != t.col:
                out[c0:c1, r0:r1] += contrib.T
        return out

    def max_eig(self, assignment: dict) -> float:
        """Largest eigenvalue of the assembled matrix (residual; want <= -epsilon)."""
        m = self.assemble(assignment)
        return float(np.linalg.eigvalsh((m + m.T) / 2.0).max())

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "block_sizes": list(self.block_sizes),
            "epsilon": self.epsilon,
            "constant": self.constant.tolist(),
            "terms": [
                {
                    "var": t.var,
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "row": t.row,
                    "col": t.col,
                    "transpose": t.transpose,
                }
                for t in self.terms
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AffineLmi":
        return cls(
            name=data["name"],
            block_sizes=tuple(data["block_sizes"]),
            constant=np.asarray(data["constant"], float),
            terms=tuple(
                LmiTerm(
                    var=t["var"],
                    left=np.asarray(t["left"], float),
                    right=np.asarray(t["right"], float),
                    row=int(t["row"]),
                    col=int(t["col"]),
                    transpose=bool(t["transpose"]),
                )
                for t in data["terms"]
            ),
            epsilon=float(data["epsilon"]),
        )


# ---------------------------------------------------------------------------
# Context blocks


@dataclass(frozen=True, eq=False)
class LmiBlocks:
    """Constant blocks of the synthesis inequalities for one subsystem."""

    context: str                 # "stability" | "reliable"
    subsystem: int
    coupling: np.ndarray         # W_i
    stacked_gain: np.ndarray     # (G_i1, ..., G_iN), j != i
    c: np.ndarray
    q11: np.ndarray
    q21: np.ndarray
    q22: np.ndarray
    q33: np.ndarray = None
    f: np.ndarray = None
    e_vertices: tuple = None     # reliable: (G_i, B_ik) per vertex
    bhat_vertices: tuple = None  # reliable: B_ik (I + (I - R_i)^-1 R_i) Lambda_i

    def q_matrix(self) -> np.ndarray:
        """Aggregate constant quadratic block (must be negative definite)."""
        q = np.block([[self.q11, self.q21.T], [self.q21, self.q22]])
        if self.q33 is not None:
            z1 = np.zeros((q.shape[0], self.q33.shape[1]))
            q = np.block([[q, z1], [z1.T, self.q33]])
        return q

    def q_negative_definite(self, tol: float = 1e-10) -> bool:
        return min_eig_margin(-self.q_matrix()) > tol


def _inv_sym(mat: np.ndarray) -> np.ndarray:
    inv = np.linalg.inv(mat)
    return (inv + inv.T) / 2.0


def stability_blocks(system: InterconnectedSystem, i: int) -> LmiBlocks:
    """Blocks for the stabilization inequality of subsystem i."""
    sub = system.subsystems[i]
    w_i = coupling_matrix(system, i)
    if not is_positive_definite(w_i):
        raise AssumptionViolation(
            2, f"subsystem {i}: aggregate coupling bound W_i is not positive definite"
        )
    g_i = system.stacked_gain(i)
    gl = g_i.shape[1]
    n = sub.state_dim
    return LmiBlocks(
        context="stability",
        subsystem=i,
        coupling=w_i,
        stacked_gain=g_i,
        c=np.eye(n),
        q11=-np.eye(gl),
        q21=np.zeros((n, gl)),
        q22=-_inv_sym(w_i),
    )


def reliable_blocks(
    system: InterconnectedSystem, cost: CostSpec, failures: FailureModel, i: int
) -> LmiBlocks:
    """Blocks for the reliable guaranteed-cost inequality of subsystem i."""
    sub = system.subsystems[i]
    n, s = sub.state_dim, sub.input_dim
    w_i = coupling_matrix(system, i)
    if not is_positive_definite(w_i):
        raise AssumptionViolation(
            2, f"subsystem {i}: aggregate coupling bound W_i is not positive definite"
        )
    q_i, r_i = cost.Q[i], cost.R[i]
    if q_i.shape != (n, n) or not is_positive_definite(q_i):
        raise LmiBuildError(f"subsystem {i}: Q_i must be symmetric positive definite ({n}x{n})")
    if r_i.shape != (s, s) or not is_positive_definite(r_i):
        raise LmiBuildError(f"subsystem {i}: R_i must be symmetric positive definite ({s}x{s})")
    if not cost.reliable_admissible(i):
        raise AssumptionViolation(
            3,
            f"subsystem {i}: R_i - I must be negative definite for reliable synthesis "
            "(admitting failures costs some freedom in the control weighting matrices); "
            "relax R_i or use stability-only synthesis",
        )
    lam = failures.lam[i]
    if lam.size != s or (lam <= 0).any():
        raise LmiBuildError(f"subsystem {i}: lambda must have {s} positive entries")
    if (failures.gamma[i] < 0).any():
        raise LmiBuildError(f"subsystem {i}: gamma must be nonnegative")

    big_l = failures.Lambda(i)
    big_g = failures.Gamma(i)
    g_i = system.stacked_gain(i)
    gl = g_i.shape[1]
    eye_s = np.eye(s)
    ir_inv = np.linalg.inv(eye_s - r_i)
    bhat = tuple(bk @ (eye_s + ir_inv @ r_i) @ big_l for bk in sub.vertex_b)
    e_vertices = tuple(np.hstack([g_i, bk]) for bk in sub.vertex_b)
    f_mat = np.hstack([big_l, big_g, r_i @ big_l])

    z = np.zeros
    q11 = np.block([[-np.eye(gl), z((gl, s))], [z((s, gl)), r_i - eye_s]])
    q22 = np.block([[-_inv_sym(q_i), z((n, n))], [z((n, n)), -_inv_sym(w_i)]])
    q33 = np.block(
        [
            [-_inv_sym(r_i), z((s, s)), z((s, s))],
            [z((s, s)), -eye_s, z((s, s))],
            [z((s, s)), z((s, s)), r_i - eye_s],
        ]
    )
    return LmiBlocks(
        context="reliable",
        subsystem=i,
        coupling=w_i,
        stacked_gain=g_i,
        c=np.vstack([np.eye(n), np.eye(n)]),
        q11=q11,
        q21=np.zeros((2 * n, gl + s)),
        q22=q22,
        q33=q33,
        f=f_mat,
        e_vertices=e_vertices,
        bhat_vertices=bhat,
    )


# ---------------------------------------------------------------------------
# Numeric primal assembly


def theorem1_primal(a, b, k_gain, x, gain, c, q11, q21, q22) -> np.ndarray:
    """Assemble the closed-loop primal block inequality at concrete matrices.

    Layout: [[(A+BK)^T X + X(A+BK), X G, C^T], [G^T X, Q11, Q21^T], [C, Q21, Q22]].
    The caller tests negativity.
    """
    a = np.atleast_2d(np.asarray(a, float))
    b = np.atleast_2d(np.asarray(b, float))
    k_gain = np.atleast_2d(np.asarray(k_gain, float))
    x = np.atleast_2d(np.asarray(x, float))
    gain = np.atleast_2d(np.asarray(gain, float))
    c = np.atleast_2d(np.asarray(c, float))
    q11 = np.atleast_2d(np.asarray(q11, float))
    q21 = np.atleast_2d(np.asarray(q21, float))
    q22 = np.atleast_2d(np.asarray(q22, float))
    n = a.shape[0]
    if x.shape != (n, n):
        raise LmiBuildError(f"X shape {x.shape} != {(n, n)}")
    if not np.allclose(x, x.T, atol=1e-9 * max(1.0, np.abs(x).max())):
        raise LmiBuildError("X must be symmetric")
    if b.shape[0] != n or k_gain.shape != (b.shape[1], n):
        raise LmiBuildError("A, B, K dimensions are inconsistent")
    if gain.shape[0] != n or c.shape[1] != n:
        raise LmiBuildError("G must have n rows and C must have n columns")
    g_w, c_h = gain.shape[1], c.shape[0]
    if q11.shape != (g_w, g_w) or q22.shape != (c_h, c_h) or q21.shape != (c_h, g_w):
        raise LmiBuildError("Q block dimensions are inconsistent with G and C")
    abar = a + b @ k_gain
    return np.block(
        [
            [abar.T @ x + x @ abar, x @ gain, c.T],
            [gain.T @ x, q11, q21.T],
            [c, q21, q22],
        ]
    )


# ---------------------------------------------------------------------------
# Slack-variable vertex inequalities


def _eye_term(var, size, row, col, sign=1.0, transpose=False):
    coeff = sign * np.eye(size)
    return LmiTerm(var=var, left=coeff, right=np.eye(size), row=row, col=col, transpose=transpose)


def _slack_main(
    name: str,
    a_k: np.ndarray,
    b_eff: np.ndarray,
    e_t: np.ndarray,
    c: np.ndarray,
    q11: np.ndarray,
    q21: np.ndarray,
    q22: np.ndarray,
    epsilon: float,
    var_y: str,
    var_v: str,
    var_n,
    f_t: np.ndarray = None,
    q33: np.ndarray = None,
) -> AffineLmi:
    """Shared 5-row (or 6-row, with the f_t/q33 pair) slack vertex inequality."""
    n = a_k.shape[0]
    m1 = e_t.shape[0]
    m2 = c.shape[0]
    sizes = [n, n, m1, m2]
    if f_t is not None:
        sizes.append(q33.shape[0])
    sizes.append(n)
    total = sum(sizes)
    offs = np.concatenate([[0], np.cumsum(sizes)])
    const = np.zeros((total, total))

    def put(r, cq, blockmat):
        r0, r1 = offs[r], offs[r + 1]
        c0, c1 = offs[cq], offs[cq + 1]
        const[r0:r1, c0:c1] = blockmat
        if r != cq:
            const[c0:c1, r0:r1] = blockmat.T

    put(2, 1, e_t)
    put(2, 2, q11)
    put(3, 2, q21)
    put(3, 3, q22)
    last = len(sizes) - 1
    if f_t is not None:
        put(4, 4, q33)

    terms = [
        _eye_term(var_v, n, 0, 0, sign=-1.0),
        _eye_term(var_v, n, 0, 0, sign=-1.0, transpose=True),
        LmiTerm(var=var_v, left=a_k, right=np.eye(n), row=1, col=0),
        _eye_term(var_y, n, 1, 0),
        _eye_term(var_y, n, 1, 1, sign=-1.0),
        LmiTerm(var=var_v, left=c, right=np.eye(n), row=3, col=0),
        _eye_term(var_v, n, last, 0),
        _eye_term(var_y, n, last, last, sign=-1.0),
    ]
    if var_n is not None:
        terms.append(LmiTerm(var=var_n, left=b_eff, right=np.eye(n), row=1, col=0))
        if f_t is not None:
            terms.append(LmiTerm(var=var_n, left=f_t, right=np.eye(n), row=4, col=0))
    return AffineLmi(
        name=name, block_sizes=tuple(sizes), constant=const, terms=tuple(terms), epsilon=epsilon
    )


def _slack_aux(name, e_t, q11, epsilon, var_y, q21=None, q22=None) -> AffineLmi:
    """Auxiliary vertex inequality: [-Y; E^T, Q11] or the full three-block form."""
    n = e_t.shape[1]
    m1 = e_t.shape[0]
    if q21 is None:
        sizes = (n, m1)
        const = np.zeros((n + m1, n + m1))
        const[n:, :n] = e_t
        const[:n, n:] = e_t.T
        const[n:, n:] = q11
    else:
        m2 = q22.shape[0]
        sizes = (n, m1, m2)
        const = np.zeros((n + m1 + m2, n + m1 + m2))
        const[n : n + m1, :n] = e_t
        const[:n, n : n + m1] = e_t.T
        const[n : n + m1, n : n + m1] = q11
        const[n + m1 :, n : n + m1] = q21
        const[n : n + m1, n + m1 :] = q21.T
        const[n + m1 :, n + m1 :] = q22
    terms = (_eye_term(var_y, n, 0, 0, sign=-1.0),)
    return AffineLmi(name=name, block_sizes=sizes, constant=const, terms=terms, epsilon=epsilon)


def theorem1_slack_vertex(
    a_k,
    b_k,
    gain,
    c,
    q11,
    q21,
    q22,
    *,
    vertex: int = 0,
    epsilon: float = 0.0,
    var_v: str = "V",
    var_n: str = "N",
):
    """Slack-variable vertex inequality pair for the generic closed-loop form.

    Returns (main, aux): the five-row main inequality in variables
    (Y{vertex}, V, N) and the full three-block auxiliary inequality.
    """
    a_k = np.atleast_2d(np.asarray(a_k, float))
    b_k = np.atleast_2d(np.asarray(b_k, float))
    gain = np.atleast_2d(np.asarray(gain, float))
    c = np.atleast_2d(np.asarray(c, float))
    q11 = np.atleast_2d(np.asarray(q11, float))
    q21 = np.atleast_2d(np.asarray(q21, float))
    q22 = np.atleast_2d(np.asarray(q22, float))
    qfull = np.block([[q11, q21.T], [q21, q22]])
    if min_eig_margin(-qfull) <= 0:
        raise LmiBuildError("aggregate Q block must be negative definite")
    var_y = f"Y{vertex}"
    main = _slack_main(
        name=f"main[k={vertex}]",
        a_k=a_k,
        b_eff=b_k,
        e_t=gain.T,
        c=c,
        q11=q11,
        q21=q21,
        q22=q22,
        epsilon=epsilon,
        var_y=var_y,
        var_v=var_v,
        var_n=var_n,
    )
    aux = _slack_aux(
        name=f"aux[k={vertex}]", e_t=gain.T, q11=q11, epsilon=epsilon, var_y=var_y, q21=q21, q22=q22
    )
    return main, aux


@dataclass(frozen=True, eq=False)
class LmiFamily:
    """Per-subsystem family of vertex inequality pairs with shared slack variables."""

    subsystem: int
    context: str
    variables: tuple
    pairs: tuple
    blocks: LmiBlocks
    y_vars: tuple
    slack_var: str
    gain_var: str = None
    epsilon: float = 0.0

    def all_constraints(self) -> tuple:
        out = []
        for main, aux in self.pairs:
            out.append(main)
            out.append(aux)
        return tuple(out)


def _problem_scale(*arrays) -> float:
    peak = 1.0
    for arr in arrays:
        if arr is not None and arr.size:
            peak = max(peak, float(np.abs(arr).max()))
    return peak


def build_stability_lmis(
    system: InterconnectedSystem,
    i: int,
    *,
    epsilon: float = DEFAULT_EPSILON,
    parameter_independent: bool = False,
    fix_gain_zero: bool = False,
    full_aux: bool = False,
) -> LmiFamily:
    """Vertex inequality family certifying decentralized stabilization of subsystem i.

    Shares V (and the gain surrogate N unless fix_gain_zero) across vertices;
    one Lyapunov vertex variable per k, or a single Y when
    parameter_independent.  The auxiliary inequality defaults to its truncated
    two-block form; full_aux emits the full three-block version instead.
    """
    blocks = stability_blocks(system, i)
    sub = system.subsystems[i]
    n, s = sub.state_dim, sub.input_dim
    L = sub.vertex_count
    eps = epsilon * _problem_scale(
        blocks.q11, blocks.q22, *sub.vertex_a, *sub.vertex_b, blocks.stacked_gain
    )
    y_vars = tuple("Y" if parameter_independent else f"Y{k}" for k in range(L))
    var_n = None if fix_gain_zero else "N"
    pairs = []
    for k in range(L):
        main = _slack_main(
            name=f"stability-main[i={i},k={k}]",
            a_k=sub.vertex_a[k],
            b_eff=sub.vertex_b[k],
            e_t=blocks.stacked_gain.T,
            c=blocks.c,
            q11=blocks.q11,
            q21=blocks.q21,
            q22=blocks.q22,
            epsilon=eps,
            var_y=y_vars[k],
            var_v="V",
            var_n=var_n,
        )
        if full_aux:
            aux = _slack_aux(
                f"stability-aux[i={i},k={k}]",
                blocks.stacked_gain.T,
                blocks.q11,
                eps,
                y_vars[k],
                q21=blocks.q21,
                q22=blocks.q22,
            )
        else:
            aux = _slack_aux(
                f"stability-aux[i={i},k={k}]", blocks.stacked_gain.T, blocks.q11, eps, y_vars[k]
            )
        pairs.append((main, aux))
    variables = [VarSpec("V", (n, n), "general")]
    if var_n is not None:
        variables.append(VarSpec("N", (s, n), "general"))
    for name in dict.fromkeys(y_vars):
        variables.append(VarSpec(name, (n, n), "spd"))
    return LmiFamily(
        subsystem=i,
        context="stability",
        variables=tuple(variables),
        pairs=tuple(pairs),
        blocks=blocks,
        y_vars=y_vars,
        slack_var="V",
        gain_var=var_n,
        epsilon=eps,
    )


def build_reliable_lmis(
    system: InterconnectedSystem,
    cost: CostSpec,
    failures: FailureModel,
    i: int,
    *,
    epsilon: float = DEFAULT_EPSILON,
    parameter_independent: bool = False,
    fix_gain_zero: bool = False,
) -> LmiFamily:
    """Vertex inequality family for the reliable guaranteed-cost design of subsystem i."""
    blocks = reliable_blocks(system, cost, failures, i)
    sub = system.subsystems[i]
    n, s = sub.state_dim, sub.input_dim
    L = sub.vertex_count
    eps = epsilon * _problem_scale(
        blocks.q11,
        blocks.q22,
        blocks.q33,
        blocks.f,
        *sub.vertex_a,
        *blocks.bhat_vertices,
        blocks.stacked_gain,
    )
    y_vars = tuple("Y" if parameter_independent else f"Y{k}" for k in range(L))
    var_n = None if fix_gain_zero else "N"
    pairs = []
    for k in range(L):
        main = _slack_main(
            name=f"reliable-main[i={i},k={k}]",
            a_k=sub.vertex_a[k],
            b_eff=blocks.bhat_vertices[k],
            e_t=blocks.e_vertices[k].T,
            c=blocks.c,
            q11=blocks.q11,
            q21=blocks.q21,
            q22=blocks.q22,
            epsilon=eps,
            var_y=y_vars[k],
            var_v="V",
            var_n=var_n,
            f_t=blocks.f.T,
            q33=blocks.q33,
        )
        aux = _slack_aux(
            f"reliable-aux[i={i},k={k}]", blocks.e_vertices[k].T, blocks.q11, eps, y_vars[k]
        )
        pairs.append((main, aux))
    variables = [VarSpec("V", (n, n), "general")]
    if var_n is not None:
        variables.append(VarSpec("N", (s, n), "general"))
    for name in dict.fromkeys(y_vars):
        variables.append(VarSpec(name, (n, n), "spd"))
    return LmiFamily(
        subsystem=i,
        context="reliable",
        variables=tuple(variables),
        pairs=tuple(pairs),
        blocks=blocks,
        y_vars=y_vars,
        slack_var="V",
        gain_var=var_n,
        epsilon=eps,
    )


def build_trace_epigraph(y_var: str, z_var: str, size: int) -> AffineLmi:
    """Epigraph inequality [[Z, I], [I, Y]] >= 0, i.e. Z >= Y^-1 when Y > 0.

    Encoded in <= 0 orientation with zero strictness so the constraint is
    exactly the nonstrict positive-semidefinite requirement.
    """
    const = np.zeros((2 * size, 2 * size))
    const[:size, size:] = -np.eye(size)
    const[size:, :size] = -np.eye(size)
    terms = (
        _eye_term(z_var, size, 0, 0, sign=-1.0),
        _eye_term(y_var, size, 1, 1, sign=-1.0),
    )
    return AffineLmi(
        name=f"epigraph[{z_var}]",
        block_sizes=(size, size),
        constant=const,
        terms=terms,
        epsilon=0.0,
    )
