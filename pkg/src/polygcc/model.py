"""Domain model: polytopic subsystems, interconnections, failure envelopes, cost weights.

The plant is a collection of N coupled subsystems

    dx_i/dt = A_i(a) x_i + B_i(a) u_i + sum_{j != i} G_ij g_ij(t, x_j)

where (A_i(a), B_i(a)) are convex combinations of L vertex matrices with a
single shared simplex weight vector ``a``, and the unknown couplings obey
||g_ij(t, x_j)|| <= ||W_ij x_j||.  Applied controls degrade as
u_i^F = Lambda_i u_i + phi_i(u_i) with |phi_ij(u)| <= gamma_ij |u|.

All types here are immutable value objects; validation of the structural
assumptions is report-based (`validate_system`) and never raises.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SIMPLEX_SUM_TOL = 1e-12
PD_EIG_TOL = 1e-10


class ModelError(ValueError):
    """Malformed domain object: wrong shapes, non-finite data, bad indices."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    if not np.isfinite(arr).all():
        raise ModelError("matrix entries must be finite")
    arr.setflags(write=False)
    return arr


def _matrix(value, rows: int, cols: int, what: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.shape != (rows, cols):
        raise ModelError(f"{what}: expected shape {(rows, cols)}, got {arr.shape}")
    return _freeze(arr)


def min_eig_margin(mat: np.ndarray) -> float:
    """Smallest eigenvalue of the symmetric part, relative to the matrix scale."""
    sym = (mat + mat.T) / 2.0
    scale = max(1.0, float(np.abs(sym).max()) if sym.size else 1.0)
    return float(np.linalg.eigvalsh(sym).min()) / scale if sym.size else 0.0


def is_positive_definite(mat: np.ndarray, tol: float = PD_EIG_TOL) -> bool:
    mat = np.asarray(mat, dtype=float)
    if mat.size == 0 or not np.allclose(mat, mat.T, atol=1e-9 * max(1.0, float(np.abs(mat).max()))):
        return False
    return min_eig_margin(mat) > tol


@dataclass(frozen=True, eq=False)
class SimplexPoint:
    """Convex weights over the L uncertainty vertices (nonnegative, summing to 1)."""

    alpha: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.alpha, dtype=float).reshape(-1)
        if arr.size < 1:
            raise ModelError("simplex point needs at least one weight")
        if (arr < 0).any():
            raise ModelError("simplex weights must be nonnegative")
        if abs(float(arr.sum()) - 1.0) > SIMPLEX_SUM_TOL:
            raise ModelError(f"simplex weights must sum to 1 (got {arr.sum()!r})")
        object.__setattr__(self, "alpha", _freeze(arr))

    def __len__(self) -> int:
        return self.alpha.size

    @classmethod
    def vertex(cls, dim: int, k: int) -> "SimplexPoint":
        w = np.zeros(dim)
        w[k] = 1.0
        return cls(w)

    @classmethod
    def coerce(cls, value) -> "SimplexPoint":
        return value if isinstance(value, SimplexPoint) else cls(value)


@dataclass(frozen=True, eq=False)
class PolytopicSubsystem:
    """One subsystem: L vertex pairs (A_ik, B_ik) plus its three dimensions."""

    index: int
    state_dim: int
    input_dim: int
    coupling_dim: int
    vertex_a: tuple
    vertex_b: tuple

    def __post_init__(self):
        n, s = self.state_dim, self.input_dim
        if min(n, s, self.coupling_dim) < 1:
            raise ModelError(f"subsystem {self.index}: dimensions must be >= 1")
        va = tuple(_matrix(m, n, n, f"subsystem {self.index} A vertex") for m in self.vertex_a)
        vb = tuple(_matrix(m, n, s, f"subsystem {self.index} B vertex") for m in self.vertex_b)
        if len(va) < 1 or len(va) != len(vb):
            raise ModelError(
                f"subsystem {self.index}: need L >= 1 and equal A/B vertex counts "
                f"(got {len(va)} and {len(vb)})"
            )
        object.__setattr__(self, "vertex_a", va)
        object.__setattr__(self, "vertex_b", vb)

    @property
    def vertex_count(self) -> int:
        return len(self.vertex_a)


def evaluate_at_alpha(sub: PolytopicSubsystem, alpha) -> tuple:
    """Convex combination (A_i(a), B_i(a)) of the vertex matrices at a simplex point."""
    point = SimplexPoint.coerce(alpha)
    if len(point) != sub.vertex_count:
        raise ModelError(
            f"simplex point has {len(point)} weights, subsystem {sub.index} has "
            f"{sub.vertex_count} vertices"
        )
    w = point.alpha
    a = sum(w[k] * sub.vertex_a[k] for k in range(len(w)))
    b = sum(w[k] * sub.vertex_b[k] for k in range(len(w)))
    return a, b


@dataclass(frozen=True, eq=False)
class InterconnectionLink:
    """Directed coupling: subsystem `source` drives `target` through G and W.

    gain is G_(target,source), shape (n_target, l_target); bound is
    W_(target,source), shape (l_target, n_source).
    """

    source: int
    target: int
    gain: np.ndarray
    bound: np.ndarray

    def __post_init__(self):
        if self.source == self.target:
            raise ModelError("self-links are not allowed")
        object.__setattr__(self, "gain", _freeze(np.atleast_2d(np.asarray(self.gain, float))))
        object.__setattr__(self, "bound", _freeze(np.atleast_2d(np.asarray(self.bound, float))))


@dataclass(frozen=True, eq=False)
class InterconnectedSystem:
    """N polytopic subsystems plus their directed coupling links."""

    subsystems: tuple
    links: tuple

    def __post_init__(self):
        subs = tuple(self.subsystems)
        if not subs:
            raise ModelError("system needs at least one subsystem")
        for pos, sub in enumerate(subs):
            if sub.index != pos:
                raise ModelError(f"subsystem at position {pos} has index {sub.index}")
        counts = {sub.vertex_count for sub in subs}
        if len(counts) != 1:
            raise ModelError(f"all subsystems must share the vertex count L (got {sorted(counts)})")
        links = tuple(self.links)
        seen = set()
        for link in links:
            n = len(subs)
            if not (0 <= link.source < n and 0 <= link.target < n):
                raise ModelError(f"link ({link.target}, {link.source}) references unknown subsystem")
            key = (link.target, link.source)
            if key in seen:
                raise ModelError(f"duplicate link into {link.target} from {link.source}")
            seen.add(key)
            tgt, src = subs[link.target], subs[link.source]
            if link.gain.shape != (tgt.state_dim, tgt.coupling_dim):
                raise ModelError(
                    f"link ({link.target}, {link.source}): gain shape {link.gain.shape} "
                    f"!= {(tgt.state_dim, tgt.coupling_dim)}"
                )
            if link.bound.shape != (tgt.coupling_dim, src.state_dim):
                raise ModelError(
                    f"link ({link.target}, {link.source}): bound shape {link.bound.shape} "
                    f"!= {(tgt.coupling_dim, src.state_dim)}"
                )
        object.__setattr__(self, "subsystems", subs)
        object.__setattr__(self, "links", links)
        object.__setattr__(self, "_link_map", {(l.target, l.source): l for l in links})

    @property
    def n_subsystems(self) -> int:
        return len(self.subsystems)

    @property
    def vertex_count(self) -> int:
        return self.subsystems[0].vertex_count

    def gain(self, target: int, source: int) -> np.ndarray:
        """G_(target,source); zeros when the pair is not linked."""
        link = self._link_map.get((target, source))
        if link is not None:
            return link.gain
        tgt = self.subsystems[target]
        return np.zeros((tgt.state_dim, tgt.coupling_dim))

    def bound(self, target: int, source: int) -> np.ndarray:
        """W_(target,source); zeros when the pair is not linked."""
        link = self._link_map.get((target, source))
        if link is not None:
            return link.bound
        return np.zeros((self.subsystems[target].coupling_dim, self.subsystems[source].state_dim))

    def stacked_gain(self, i: int) -> np.ndarray:
        """Horizontal stack (G_i1, ..., G_iN) skipping j = i, ascending j."""
        blocks = [self.gain(i, j) for j in range(self.n_subsystems) if j != i]
        if not blocks:
            return np.zeros((self.subsystems[i].state_dim, 0))
        return np.hstack(blocks)


def coupling_matrix(system: InterconnectedSystem, i: int) -> np.ndarray:
    """Aggregate outgoing-coupling Gram matrix W_i = sum_{j != i} W_ji^T W_ji."""
    n_i = system.subsystems[i].state_dim
    acc = np.zeros((n_i, n_i))
    for j in range(system.n_subsystems):
        if j == i:
            continue
        w = system.bound(j, i)
        acc += w.T @ w
    return (acc + acc.T) / 2.0


@dataclass(frozen=True, eq=False)
class FailureModel:
    """Per-actuator nominal effectiveness (lambda) and degradation envelope (gamma)."""

    lam: tuple
    gamma: tuple

    def __post_init__(self):
        lam = tuple(_freeze(np.asarray(v, float).reshape(-1)) for v in self.lam)
        gam = tuple(_freeze(np.asarray(v, float).reshape(-1)) for v in self.gamma)
        if len(lam) != len(gam):
            raise ModelError("lambda and gamma must cover the same subsystems")
        for i, (lv, gv) in enumerate(zip(lam, gam)):
            if lv.shape != gv.shape:
                raise ModelError(f"subsystem {i}: lambda and gamma lengths differ")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "gamma", gam)

    @classmethod
    def nominal(cls, input_dims) -> "FailureModel":
        """No failures: lambda = 1, gamma = 0 (u^F = u)."""
        return cls(
            lam=tuple(np.ones(s) for s in input_dims),
            gamma=tuple(np.zeros(s) for s in input_dims),
        )

    def Lambda(self, i: int) -> np.ndarray:
        return np.diag(self.lam[i])

    def Gamma(self, i: int) -> np.ndarray:
        return np.diag(self.gamma[i])

    def outage_admissible(self, i: int) -> np.ndarray:
        """Boolean per actuator: full outage is inside the envelope (gamma >= lambda)."""
        return self.gamma[i] >= self.lam[i]


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Quadratic cost weights: state weights Q_i and control weights R_i."""

    Q: tuple
    R: tuple

    def __post_init__(self):
        qs = []
        rs = []
        for i, m in enumerate(self.Q):
            arr = np.atleast_2d(np.asarray(m, float))
            if arr.shape[0] != arr.shape[1]:
                raise ModelError(f"Q[{i}] must be square")
            qs.append(_freeze(arr))
        for i, m in enumerate(self.R):
            arr = np.atleast_2d(np.asarray(m, float))
            if arr.shape[0] != arr.shape[1]:
                raise ModelError(f"R[{i}] must be square")
            rs.append(_freeze(arr))
        if len(qs) != len(rs):
            raise ModelError("Q and R must cover the same subsystems")
        object.__setattr__(self, "Q", tuple(qs))
        object.__setattr__(self, "R", tuple(rs))

    def reliable_admissible(self, i: int, tol: float = PD_EIG_TOL) -> bool:
        """True when R_i - I is negative definite (reliable synthesis allowed)."""
        r = self.R[i]
        return min_eig_margin(-(r - np.eye(r.shape[0]))) > tol


@dataclass(frozen=True)
class ValidationIssue:
    code: str
    where: str
    message: str
    blocks_reliable_only: bool = False

    def __str__(self) -> str:
        tag = "reliable-only" if self.blocks_reliable_only else "error"
        return f"[{tag}] {self.where}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple

    @property
    def ok(self) -> bool:
        return not self.issues

    @property
    def hard_issues(self) -> tuple:
        return tuple(i for i in self.issues if not i.blocks_reliable_only)

    @property
    def stability_ok(self) -> bool:
        return not self.hard_issues

    @property
    def reliable_ok(self) -> bool:
        return self.ok

    def summary(self) -> str:
        if self.ok:
            return "all assumptions hold"
        return "\n".join(str(i) for i in self.issues)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "stability_ok": self.stability_ok,
            "reliable_ok": self.reliable_ok,
            "issues": [
                {
                    "code": i.code,
                    "where": i.where,
                    "message": i.message,
                    "blocks_reliable_only": i.blocks_reliable_only,
                }
                for i in self.issues
            ],
        }


def validate_system(
    system: InterconnectedSystem,
    cost: CostSpec = None,
    failures: FailureModel = None,
) -> ValidationReport:
    """Check every structural assumption; report violations instead of raising.

    Coupling positivity failures and malformed weights are hard errors;
    the R_i - I < 0 restriction is flagged separately because it only blocks
    reliable synthesis ("stability-only synthesis still possible").
    """
    issues = []

    for i, sub in enumerate(system.subsystems):
        w_i = coupling_matrix(system, i)
        if not is_positive_definite(w_i):
            issues.append(
                ValidationIssue(
                    code="coupling-not-pd",
                    where=f"subsystem {i}",
                    message=(
                        "W_i not positive definite (every subsystem needs at least one "
                        "outgoing link with a full-rank aggregate bound)"
                    ),
                )
            )

    if cost is not None:
        if len(cost.Q) != system.n_subsystems:
            issues.append(
                ValidationIssue(
                    code="cost-count",
                    where="cost",
                    message=f"expected {system.n_subsystems} (Q, R) pairs, got {len(cost.Q)}",
                )
            )
        else:
            for i, sub in enumerate(system.subsystems):
                q, r = cost.Q[i], cost.R[i]
                if q.shape != (sub.state_dim, sub.state_dim):
                    issues.append(
                        ValidationIssue(
                            code="cost-shape",
                            where=f"subsystem {i}",
                            message=f"Q shape {q.shape} != {(sub.state_dim,) * 2}",
                        )
                    )
                elif not is_positive_definite(q):
                    issues.append(
                        ValidationIssue(
                            code="cost-not-spd",
                            where=f"subsystem {i}",
                            message="Q_i is not symmetric positive definite",
                        )
                    )
                if r.shape != (sub.input_dim, sub.input_dim):
                    issues.append(
                        ValidationIssue(
                            code="cost-shape",
                            where=f"subsystem {i}",
                            message=f"R shape {r.shape} != {(sub.input_dim,) * 2}",
                        )
                    )
                elif not is_positive_definite(r):
                    issues.append(
                        ValidationIssue(
                            code="cost-not-spd",
                            where=f"subsystem {i}",
                            message="R_i is not symmetric positive definite",
                        )
                    )
                elif not cost.reliable_admissible(i):
                    issues.append(
                        ValidationIssue(
                            code="reliable-weight-bound",
                            where=f"subsystem {i}",
                            message=(
                                "R_i - I is not negative definite: reliable synthesis "
                                "unavailable, stability-only synthesis still possible"
                            ),
                            blocks_reliable_only=True,
                        )
                    )

    if failures is not None:
        if len(failures.lam) != system.n_subsystems:
            issues.append(
                ValidationIssue(
                    code="failure-count",
                    where="failures",
                    message=f"expected {system.n_subsystems} subsystems, got {len(failures.lam)}",
                    blocks_reliable_only=True,
                )
            )
        else:
            for i, sub in enumerate(system.subsystems):
                lv, gv = failures.lam[i], failures.gamma[i]
                if lv.size != sub.input_dim:
                    issues.append(
                        ValidationIssue(
                            code="failure-shape",
                            where=f"subsystem {i}",
                            message=f"lambda length {lv.size} != input_dim {sub.input_dim}",
                            blocks_reliable_only=True,
                        )
                    )
                    continue
                if (lv <= 0).any():
                    issues.append(
                        ValidationIssue(
                            code="failure-lambda",
                            where=f"subsystem {i}",
                            message="every lambda_ij must be > 0 (Lambda_i positive definite)",
                            blocks_reliable_only=True,
                        )
                    )
                if (gv < 0).any():
                    issues.append(
                        ValidationIssue(
                            code="failure-gamma",
                            where=f"subsystem {i}",
                            message="every gamma_ij must be >= 0",
                            blocks_reliable_only=True,
                        )
                    )

    return ValidationReport(issues=tuple(issues))


# ---------------------------------------------------------------------------
# JSON system description files


def system_to_dict(
    system: InterconnectedSystem,
    cost: CostSpec = None,
    failures: FailureModel = None,
) -> dict:
    data = {
        "subsystems": [
            {
                "state_dim": sub.state_dim,
                "input_dim": sub.input_dim,
                "coupling_dim": sub.coupling_dim,
                "A_vertices": [m.tolist() for m in sub.vertex_a],
                "B_vertices": [m.tolist() for m in sub.vertex_b],
            }
            for sub in system.subsystems
        ],
        "links": [
            {
                "from": link.source,
                "to": link.target,
                "G": link.gain.tolist(),
                "W": link.bound.tolist(),
            }
            for link in system.links
        ],
    }
    if cost is not None:
        data["cost"] = {"Q": [m.tolist() for m in cost.Q], "R": [m.tolist() for m in cost.R]}
    if failures is not None:
        data["failures"] = {
            "lambda": [v.tolist() for v in failures.lam],
            "gamma": [v.tolist() for v in failures.gamma],
        }
    return data


def system_from_dict(data: dict):
    """Parse a system description; returns (system, cost or None, failures or None)."""
    try:
        subs = []
        for pos, entry in enumerate(data["subsystems"]):
            subs.append(
                PolytopicSubsystem(
                    index=pos,
                    state_dim=int(entry["state_dim"]),
                    input_dim=int(entry["input_dim"]),
                    coupling_dim=int(entry["coupling_dim"]),
                    vertex_a=tuple(np.asarray(m, float) for m in entry["A_vertices"]),
                    vertex_b=tuple(np.asarray(m, float) for m in entry["B_vertices"]),
                )
            )
        links = tuple(
            InterconnectionLink(
                source=int(entry["from"]),
                target=int(entry["to"]),
                gain=np.asarray(entry["G"], float),
                bound=np.asarray(entry["W"], float),
            )
            for entry in data.get("links", [])
        )
        system = InterconnectedSystem(subsystems=tuple(subs), links=links)
        cost = None
        if "cost" in data:
            cost = CostSpec(
                Q=tuple(np.asarray(m, float) for m in data["cost"]["Q"]),
                R=tuple(np.asarray(m, float) for m in data["cost"]["R"]),
            )
        failures = None
        if "failures" in data:
            failures = FailureModel(
                lam=tuple(np.asarray(v, float) for v in data["failures"]["lambda"]),
                gamma=tuple(np.asarray(v, float) for v in data["failures"]["gamma"]),
            )
        return system, cost, failures
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed system description: {exc}") from exc


def load_system(path):
    with open(Path(path), "r", encoding="utf-8") as fh:
        return system_from_dict(json.load(fh))


def save_system(path, system, cost=None, failures=None) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(system_to_dict(system, cost, failures), fh, indent=2)
        fh.write("\n")
