"""Closed-loop simulation under sampled admissible interconnection and failure
realizations, quadratic cost accumulation, and Monte Carlo bound checking.

All Monte Carlo samples share one batched fixed-step RK4 engine (grouped by
realization family); a single trajectory is the batch-of-one special case, so
both paths perform identical arithmetic.  Per-sample randomness comes from
np.random.default_rng([seed, sample_index]), making parallel and serial
executions produce identical sample sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import CostSpec, FailureModel, InterconnectedSystem, SimplexPoint
from .synthesis import MODE_RELIABLE, SynthesisResult, cost_bound_for_initial_state

DIVERGENCE_NORM = 1e12
BOUND_TOL = 1e-12

INTERCONNECTION_KINDS = ("zero", "constant", "sinusoidal", "adversarial")
FAILURE_KINDS = ("none", "outage", "switching")


class RealizationBoundError(RuntimeError):
    """A realization violated its admissibility bound (internal invariant)."""


class DivergenceError(RuntimeError):
    """State norm overflow; carries the truncated trajectory."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True, eq=False)
class InterconnectionRealization:
    """Admissible coupling realization g_ij(t, x_j) = D_ij(t) W_ij x_j, ||D_ij|| <= 1.

    kinds: "zero" (D = 0), "constant" (random fixed contraction),
    "sinusoidal" (D = sin(w t + phi) I), "adversarial" (sign switching aligned
    against the Lyapunov cross term, frozen over each integration step).
    """

    kind: str
    contractions: tuple = None
    omegas: tuple = None
    phases: tuple = None

    def __post_init__(self):
        if self.kind not in INTERCONNECTION_KINDS:
            raise ValueError(f"unknown interconnection kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class FailureRealization:
    """Admissible degradation phi_ij(u) = delta_ij(t) gamma_ij u with |delta| <= 1.

    kinds: "none" (delta = 0), "outage" (delta = -min(lambda/gamma, 1), the
    strongest constant degradation: full outage whenever gamma >= lambda),
    "switching" (piecewise-constant random delta with a fixed dwell time).
    """

    kind: str
    deltas: tuple = None
    dwell: float = None

    def __post_init__(self):
        if self.kind not in FAILURE_KINDS:
            raise ValueError(f"unknown failure kind {self.kind!r}")


def sample_interconnection(
    system: InterconnectedSystem, kind: str, rng: np.random.Generator
) -> InterconnectionRealization:
    if kind in ("zero", "adversarial"):
        return InterconnectionRealization(kind=kind)
    if kind == "constant":
        mats = []
        for link in system.links:
            l_dim = link.gain.shape[1]
            raw = rng.normal(size=(l_dim, l_dim))
            smax = np.linalg.svd(raw, compute_uv=False).max() if l_dim else 1.0
            mats.append(raw / max(1.0, smax))
        return InterconnectionRealization(kind=kind, contractions=tuple(mats))
    if kind == "sinusoidal":
        n_links = len(system.links)
        return InterconnectionRealization(
            kind=kind,
            omegas=tuple(rng.uniform(0.5, 3.0, size=n_links)),
            phases=tuple(rng.uniform(0.0, 2 * np.pi, size=n_links)),
        )
    raise ValueError(f"unknown interconnection kind {kind!r}")


def sample_failure(
    failures: FailureModel,
    kind: str,
    rng: np.random.Generator,
    *,
    horizon: float,
    dwell: float = 0.5,
) -> FailureRealization:
    if kind == "none":
        return FailureRealization(kind=kind, deltas=tuple(np.zeros_like(v) for v in failures.lam))
    if kind == "outage":
        deltas = []
        for lam, gam in zip(failures.lam, failures.gamma):
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(gam > 0, lam / np.where(gam > 0, gam, 1.0), 0.0)
            deltas.append(-np.minimum(ratio, 1.0))
        return FailureRealization(kind=kind, deltas=tuple(deltas))
    if kind == "switching":
        n_intervals = int(math.ceil(horizon / dwell)) + 1
        deltas = tuple(
            rng.uniform(-1.0, 1.0, size=(n_intervals, v.size)) for v in failures.lam
        )
        return FailureRealization(kind=kind, deltas=deltas, dwell=dwell)
    raise ValueError(f"unknown failure kind {kind!r}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled closed-loop run: states, controls, running cost, Lyapunov value."""

    time: np.ndarray
    states: np.ndarray             # (steps+1, n_total)
    controls: np.ndarray           # commanded u
    applied_controls: np.ndarray   # degraded u^F
    cost: np.ndarray               # running trapezoidal integral
    alpha: np.ndarray
    lyapunov: np.ndarray = None    # V(x(t), alpha) when certificate matrices given
    diverged: bool = False
    state_dims: tuple = ()
    input_dims: tuple = ()

    def lyapunov_rate(self) -> np.ndarray:
        """Central-difference d/dt of the Lyapunov samples."""
        if self.lyapunov is None:
            raise ValueError("trajectory carries no Lyapunov samples")
        return np.gradient(self.lyapunov, self.time)


# ---------------------------------------------------------------------------
# Batched fixed-step RK4 engine


def _block_offsets(dims):
    offs = np.concatenate([[0], np.cumsum(dims)])
    return [slice(int(offs[i]), int(offs[i + 1])) for i in range(len(dims))]


class _BatchEngine:
    """Shared integrator: all samples in a batch have the same realization kinds."""

    def __init__(
        self,
        system: InterconnectedSystem,
        gains,
        alphas: np.ndarray,
        inter_reals,
        fail_reals,
        failures: FailureModel,
        cost: CostSpec,
        lyapunov,
    ):
        self.system = system
        subs = system.subsystems
        self.S = alphas.shape[0]
        self.n_dims = tuple(s.state_dim for s in subs)
        self.m_dims = tuple(s.input_dim for s in subs)
        self.n_total = sum(self.n_dims)
        self.m_total = sum(self.m_dims)
        self.x_slices = _block_offsets(self.n_dims)
        self.u_slices = _block_offsets(self.m_dims)
        self.ikind = inter_reals[0].kind
        self.fkind = fail_reals[0].kind
        if any(r.kind != self.ikind for r in inter_reals):
            raise ValueError("mixed interconnection kinds in one batch")
        if any(r.kind != self.fkind for r in fail_reals):
            raise ValueError("mixed failure kinds in one batch")
        if self.ikind == "adversarial" and lyapunov is None:
            raise ValueError("adversarial interconnection needs the Lyapunov matrices")

        S, n = self.S, self.n_total
        # K stack and failure vectors are parameter independent
        self.k_stack = np.zeros((self.m_total, n))
        for i, k_i in enumerate(gains):
            self.k_stack[self.u_slices[i], self.x_slices[i]] = k_i
        self.lam_vec = np.concatenate([failures.lam[i] for i in range(len(subs))])
        self.gam_vec = np.concatenate([failures.gamma[i] for i in range(len(subs))])

        # per-sample vertex combinations
        a_par = []
        b_par = []
        for s in range(S):
            w = alphas[s]
            a_par.append([sum(w[k] * sub.vertex_a[k] for k in range(len(w))) for sub in subs])
            b_par.append([sum(w[k] * sub.vertex_b[k] for k in range(len(w))) for sub in subs])

        # constant failure offset folded into the base matrix
        if self.fkind == "switching":
            self.delta0 = np.zeros((S, self.m_total))
        else:
            self.delta0 = np.array(
                [np.concatenate([fr.deltas[i] for i in range(len(subs))]) for fr in fail_reals]
            )

        base = np.zeros((S, n, n))
        for s in range(S):
            for i, sub in enumerate(subs):
                eff0 = failures.lam[i] + (
                    fail_reals[s].deltas[i] if self.fkind != "switching" else 0.0
                ) * failures.gamma[i]
                acl = a_par[s][i] + b_par[s][i] @ np.diag(eff0) @ gains[i]
                base[s][self.x_slices[i], self.x_slices[i]] = acl
        self.base = base

        # switching failure machinery: per-actuator rank-one blocks scaled by gamma
        self.sw_mats = None
        if self.fkind == "switching":
            cols = []
            for s in range(S):
                mats = []
                for i, sub in enumerate(subs):
                    for j in range(sub.input_dim):
                        g_ij = failures.gamma[i][j]
                        block = np.zeros((n, n))
                        if g_ij != 0.0:
                            block[self.x_slices[i], self.x_slices[i]] = (
                                g_ij * np.outer(b_par[s][i][:, j], gains[i][j, :])
                            )
                        mats.append(block)
                cols.append(mats)
            self.sw_mats = np.array(cols)  # (S, m_total, n, n)
            self.sw_values = [fr.deltas for fr in fail_reals]
            self.sw_dwell = fail_reals[0].dwell

        # interconnection pair machinery
        self.pairs = []
        for p, link in enumerate(system.links):
            i, j = link.target, link.source
            entry = {
                "target": i,
                "source": j,
                "sl_i": self.x_slices[i],
                "sl_j": self.x_slices[j],
                "w": link.bound,
            }
            if self.ikind == "zero":
                continue
            if self.ikind == "constant":
                bw = np.array([inter_reals[s].contractions[p] @ link.bound for s in range(S)])
            else:
                bw = np.repeat(link.bound[None, :, :], S, axis=0)
            entry["bw"] = bw  # (S, l, n_j): g = coeff * bw @ x_j
            entry["gm"] = np.einsum("ab,sbc->sac", link.gain, bw)  # (S, n_i, n_j)
            if self.ikind == "sinusoidal":
                entry["omega"] = np.array([inter_reals[s].omegas[p] for s in range(S)])
                entry["phase"] = np.array([inter_reals[s].phases[p] for s in range(S)])
            if self.ikind == "adversarial":
                entry["q"] = np.array(
                    [lyapunov[s][i] @ link.gain @ link.bound for s in range(S)]
                )  # (S, n_i, n_j)
            self.pairs.append(entry)

        self.time_constant = self.ikind in ("zero", "constant") and self.fkind != "switching"
        if self.time_constant:
            m_const = base.copy()
            for entry in self.pairs:
                m_const[:, entry["sl_i"], entry["sl_j"]] += entry["gm"]
            self.m_const = m_const

        self.cost_blocks = None
        if cost is not None:
            q_blk = np.zeros((n, n))
            r_blk = np.zeros((self.m_total, self.m_total))
            for i in range(len(subs)):
                q_blk[self.x_slices[i], self.x_slices[i]] = cost.Q[i]
                r_blk[self.u_slices[i], self.u_slices[i]] = cost.R[i]
            self.cost_blocks = (q_blk, r_blk)

        self.x_lyap = None
        if lyapunov is not None:
            xb = np.zeros((S, n, n))
            for s in range(S):
                for i in range(len(subs)):
                    xb[s][self.x_slices[i], self.x_slices[i]] = lyapunov[s][i]
            self.x_lyap = xb

    # -- time-varying coefficients -----------------------------------------

    def _delta_at(self, t: float) -> np.ndarray:
        if self.fkind != "switching":
            return self.delta0
        idx = min(int(t / self.sw_dwell), self.sw_values[0][0].shape[0] - 1)
        return np.array(
            [np.concatenate([vals[i][idx] for i in range(len(self.n_dims))])
             for vals in self.sw_values]
        )

    def _pair_coeff(self, entry, t: float, x: np.ndarray) -> np.ndarray:
        if self.ikind == "constant":
            return np.ones(self.S)
        if self.ikind == "sinusoidal":
            return np.sin(entry["omega"] * t + entry["phase"])
        # adversarial: maximize the Lyapunov cross term 2 x_i^T X_i G_ij g_ij
        q = np.einsum("si,sij,sj->s", x[:, entry["sl_i"]], entry["q"], x[:, entry["sl_j"]])
        return np.where(q >= 0, 1.0, -1.0)

    def _matrix_at(self, t: float, x_step: np.ndarray, pair_coeffs) -> np.ndarray:
        if self.time_constant:
            return self.m_const
        m = self.base.copy()
        if self.fkind == "switching":
            delta = self._delta_at(t)
            m += np.einsum("sp,spij->sij", delta, self.sw_mats)
        for entry, coeff in zip(self.pairs, pair_coeffs):
            m[:, entry["sl_i"], entry["sl_j"]] += coeff[:, None, None] * entry["gm"]
        return m

    def effective_gain(self, t: float) -> np.ndarray:
        """(S, m_total) multiplicative actuator effectiveness lambda + delta(t) gamma."""
        return self.lam_vec[None, :] + self._delta_at(t) * self.gam_vec[None, :]

    def controls(self, t: float, x: np.ndarray):
        u = x @ self.k_stack.T
        u_f = self.effective_gain(t) * u
        return u, u_f

    def integrand(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.cost_blocks is None:
            return np.zeros(self.S)
        q_blk, r_blk = self.cost_blocks
        _, u_f = self.controls(t, x)
        return np.einsum("si,ij,sj->s", x, q_blk, x) + np.einsum(
            "si,ij,sj->s", u_f, r_blk, u_f
        )

    def lyapunov_value(self, x: np.ndarray) -> np.ndarray:
        if self.x_lyap is None:
            return None
        return np.einsum("si,sij,sj->s", x, self.x_lyap, x)

    def check_bounds(self, t: float, x: np.ndarray, pair_coeffs) -> None:
        u, u_f = self.controls(t, x)
        phi = u_f - self.lam_vec[None, :] * u
        if (np.abs(phi) > self.gam_vec[None, :] * np.abs(u) + 1e-12).any():
            raise RealizationBoundError("failure realization exceeded its gamma envelope")
        for entry, coeff in zip(self.pairs, pair_coeffs):
            x_j = x[:, entry["sl_j"]]
            g = coeff[:, None] * np.einsum("sab,sb->sa", entry["bw"], x_j)
            wx = x_j @ entry["w"].T
            g_norm = np.linalg.norm(g, axis=1)
            wx_norm = np.linalg.norm(wx, axis=1)
            if (g_norm > wx_norm + 1e-12).any():
                raise RealizationBoundError("interconnection realization exceeded its bound")


def _integrate_batch(
    system,
    gains,
    alphas,
    inter_reals,
    fail_reals,
    failures,
    x0s,
    horizon: float,
    step: float,
    *,
    cost=None,
    lyapunov=None,
    record_series: bool = False,
    check_bounds: bool = True,
):
    if step <= 0:
        raise ValueError("step must be positive")
    if horizon < step:
        raise ValueError("horizon must cover at least one step")
    eng = _BatchEngine(system, gains, alphas, inter_reals, fail_reals, failures, cost, lyapunov)
    S, n = eng.S, eng.n_total
    n_steps = int(round(horizon / step))
    x = np.array(x0s, dtype=float).reshape(S, n)
    active = np.ones(S, dtype=bool)
    diverge_step = np.full(S, -1, dtype=int)
    cost_acc = np.zeros(S)
    h = step

    if record_series:
        if S != 1:
            raise ValueError("series recording is limited to single-trajectory batches")
        times = np.arange(n_steps + 1) * h
        xs = np.zeros((n_steps + 1, n))
        us = np.zeros((n_steps + 1, eng.m_total))
        ufs = np.zeros((n_steps + 1, eng.m_total))
        costs = np.zeros(n_steps + 1)
        vs = np.zeros(n_steps + 1) if eng.x_lyap is not None else None

    prev_integrand = eng.integrand(0.0, x)
    if record_series:
        xs[0] = x[0]
        u0, uf0 = eng.controls(0.0, x)
        us[0], ufs[0] = u0[0], uf0[0]
        if vs is not None:
            vs[0] = eng.lyapunov_value(x)[0]

    for stepi in range(n_steps):
        t = stepi * h
        pair_coeffs = [eng._pair_coeff(entry, t, x) for entry in eng.pairs]
        if check_bounds:
            eng.check_bounds(t, x, pair_coeffs)
        if eng.time_constant:
            m0 = m1 = m2 = eng.m_const
        else:
            # sinusoidal coefficients move within the step; switching values
            # follow the dwell grid; adversarial signs freeze at the step start
            m0 = eng._matrix_at(t, x, pair_coeffs)
            if eng.ikind == "sinusoidal":
                mid_coeffs = [eng._pair_coeff(entry, t + h / 2, x) for entry in eng.pairs]
                end_coeffs = [eng._pair_coeff(entry, t + h, x) for entry in eng.pairs]
            else:
                mid_coeffs = end_coeffs = pair_coeffs
            m1 = eng._matrix_at(t + h / 2, x, mid_coeffs)
            m2 = eng._matrix_at(t + h, x, end_coeffs)

        k1 = np.einsum("sij,sj->si", m0, x)
        k2 = np.einsum("sij,sj->si", m1, x + (h / 2) * k1)
        k3 = np.einsum("sij,sj->si", m1, x + (h / 2) * k2)
        k4 = np.einsum("sij,sj->si", m2, x + h * k3)
        x_new = x + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        x = np.where(active[:, None], x_new, x)

        norms = np.linalg.norm(x, axis=1)
        blew = active & ~np.isfinite(norms) | (active & (norms > DIVERGENCE_NORM))
        if blew.any():
            diverge_step[blew] = stepi + 1
            active &= ~blew
            x[blew] = 0.0  # freeze diverged samples; they count as violations

        cur_integrand = eng.integrand(t + h, x)
        cost_acc = np.where(active, cost_acc + (h / 2) * (prev_integrand + cur_integrand), cost_acc)
        prev_integrand = cur_integrand

        if record_series:
            xs[stepi + 1] = x[0]
            u_c, uf_c = eng.controls(t + h, x)
            us[stepi + 1], ufs[stepi + 1] = u_c[0], uf_c[0]
            costs[stepi + 1] = cost_acc[0]
            if vs is not None:
                vs[stepi + 1] = eng.lyapunov_value(x)[0]
            if not active[0]:
                times = times[: stepi + 2]
                xs, us, ufs, costs = xs[: stepi + 2], us[: stepi + 2], ufs[: stepi + 2], costs[: stepi + 2]
                if vs is not None:
                    vs = vs[: stepi + 2]
                break

    out = {
        "x_final": x,
        "cost": cost_acc,
        "diverged": diverge_step >= 0,
        "diverge_step": diverge_step,
        "v_final": eng.lyapunov_value(x),
    }
    if record_series:
        out["series"] = {
            "time": times,
            "states": xs,
            "controls": us,
            "applied_controls": ufs,
            "cost": costs,
            "lyapunov": vs,
        }
    return out


# ---------------------------------------------------------------------------
# Public operations


def simulate(
    system: InterconnectedSystem,
    gains,
    alpha,
    interconnection: InterconnectionRealization,
    failure: FailureRealization,
    x0,
    horizon: float,
    step: float,
    *,
    cost: CostSpec = None,
    failures: FailureModel = None,
    lyapunov=None,
) -> Trajectory:
    """Integrate the closed loop with classical fixed-step RK4.

    gains is the per-subsystem feedback list; failures defaults to the nominal
    model (u^F = u).  The running cost integral uses the trapezoidal rule on
    the sampled integrand (zero when no cost weights are given); lyapunov, when
    given as per-subsystem certificate matrices at this alpha, adds V samples.
    Raises DivergenceError (with the truncated trajectory attached) when the
    state norm exceeds 1e12.
    """
    point = SimplexPoint.coerce(alpha)
    failures = failures or FailureModel.nominal(tuple(s.input_dim for s in system.subsystems))
    out = _integrate_batch(
        system,
        gains,
        point.alpha[None, :],
        [interconnection],
        [failure],
        failures,
        np.asarray(x0, float).reshape(1, -1),
        horizon,
        step,
        cost=cost,
        lyapunov=None if lyapunov is None else [lyapunov],
        record_series=True,
    )
    series = out["series"]
    traj = Trajectory(
        time=series["time"],
        states=series["states"],
        controls=series["controls"],
        applied_controls=series["applied_controls"],
        cost=series["cost"],
        alpha=point.alpha,
        lyapunov=series["lyapunov"],
        diverged=bool(out["diverged"][0]),
        state_dims=tuple(s.state_dim for s in system.subsystems),
        input_dims=tuple(s.input_dim for s in system.subsystems),
    )
    if traj.diverged:
        raise DivergenceError("state norm exceeded 1e12", trajectory=traj)
    return traj


@dataclass
class McConfig:
    n_samples: int = 500
    horizon: float = 20.0
    step: float = 1e-3
    seed: int = 0
    dwell: float = 0.5
    x0_scale: float = 1.0
    include_vertices: bool = True


@dataclass
class McSummary:
    n_samples: int
    violations: tuple
    max_total: float
    samples: tuple
    horizon_warnings: int
    seed: int

    @property
    def certified(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "seed": self.seed,
            "certified": self.certified,
            "max_total": self.max_total,
            "horizon_warnings": self.horizon_warnings,
            "violations": list(self.violations),
            "samples": list(self.samples),
        }


def monte_carlo_cost(
    result: SynthesisResult,
    system: InterconnectedSystem,
    cost: CostSpec,
    failures: FailureModel,
    config: McConfig = None,
) -> McSummary:
    """Monte Carlo comparison of realized costs against the certified bound.

    Each sample draws a simplex point (the first L samples take the vertices),
    an interconnection realization, a failure realization, and a standard
    normal initial state; its finite-horizon cost plus the terminal Lyapunov
    value (a conservative tail surrogate under the certified decrement) must
    stay below the worst-case vertex bound.  Divergent samples count as
    violations.
    """
    config = config or McConfig()
    if result.mode != MODE_RELIABLE:
        raise ValueError("Monte Carlo bound checks need a reliable-mode result")
    if not result.feasible:
        raise ValueError(f"no feasible design for subsystems {result.infeasible_subsystems}")

    n_sub = system.n_subsystems
    L = result.vertex_count
    gains = list(result.gains())
    inter_cycle = ("constant", "sinusoidal", "adversarial")
    fail_cycle = ("none", "outage", "switching")

    draws = []
    for idx in range(config.n_samples):
        rng = np.random.default_rng([config.seed, idx])
        if config.include_vertices and idx < L:
            alpha = np.eye(L)[idx]
        else:
            alpha = rng.dirichlet(np.ones(L))
        ikind = inter_cycle[idx % len(inter_cycle)]
        fkind = fail_cycle[(idx // len(inter_cycle)) % len(fail_cycle)]
        inter = sample_interconnection(system, ikind, rng)
        fail = sample_failure(failures, fkind, rng, horizon=config.horizon, dwell=config.dwell)
        x0 = config.x0_scale * rng.standard_normal(sum(result.state_dims))
        lyap = [result.lyapunov_at(i, alpha) for i in range(n_sub)]
        bound = cost_bound_for_initial_state(result, x0)["worst_case"]
        v0 = sum(
            float(x0_part @ lyap[i] @ x0_part)
            for i, x0_part in enumerate(np.split(x0, np.cumsum(result.state_dims)[:-1]))
        )
        draws.append(
            {
                "index": idx,
                "alpha": alpha,
                "ikind": ikind,
                "fkind": fkind,
                "inter": inter,
                "fail": fail,
                "x0": x0,
                "lyap": lyap,
                "bound": bound,
                "v0": v0,
            }
        )

    groups = {}
    for d in draws:
        groups.setdefault((d["ikind"], d["fkind"]), []).append(d)

    rows = [None] * config.n_samples
    for (_, _), members in sorted(groups.items()):
        out = _integrate_batch(
            system,
            gains,
            np.array([d["alpha"] for d in members]),
            [d["inter"] for d in members],
            [d["fail"] for d in members],
            failures,
            np.array([d["x0"] for d in members]),
            config.horizon,
            config.step,
            cost=cost,
            lyapunov=[d["lyap"] for d in members],
        )
        for pos, d in enumerate(members):
            j_t = float(out["cost"][pos])
            v_t = float(out["v_final"][pos])
            diverged = bool(out["diverged"][pos])
            total = j_t + v_t
            rows[d["index"]] = {
                "index": d["index"],
                "alpha": d["alpha"].tolist(),
                "interconnection": d["ikind"],
                "failure": d["fkind"],
                "cost": j_t,
                "terminal_lyapunov": v_t,
                "total": total,
                "bound": d["bound"],
                "margin": d["bound"] - total,
                "diverged": diverged,
                "horizon_warning": bool(v_t > 0.01 * d["v0"] + BOUND_TOL),
                "violation": diverged or (total > d["bound"] + BOUND_TOL),
            }

    violations = tuple(r for r in rows if r["violation"])
    return McSummary(
        n_samples=config.n_samples,
        violations=violations,
        max_total=max(r["total"] for r in rows),
        samples=tuple(rows),
        horizon_warnings=sum(1 for r in rows if r["horizon_warning"]),
        seed=config.seed,
    )


def lyapunov_descent_check(
    trajectory: Trajectory, result: SynthesisResult, *, state_floor: float = 1e-8
) -> dict:
    """Finite-difference check that V decreases at least as fast as the cost accrues.

    Recomputes V(x(t), alpha) from the trajectory states and the result's
    certificate matrices and requires dV/dt + dJ/dt < 0 at every interior
    sample whose state norm exceeds the floor, within the finite-difference
    tolerance 10 * step.
    """
    alpha = trajectory.alpha
    offsets = _block_offsets(trajectory.state_dims)
    v_vals = np.zeros(trajectory.states.shape[0])
    for i, sl in enumerate(offsets):
        x_i = result.lyapunov_at(i, alpha)
        v_vals += np.einsum("ti,ij,tj->t", trajectory.states[:, sl], x_i, trajectory.states[:, sl])
    h = float(trajectory.time[1] - trajectory.time[0])
    dv = np.gradient(v_vals, trajectory.time)
    dj = np.gradient(trajectory.cost, trajectory.time)
    resid = dv + dj
    norms = np.linalg.norm(trajectory.states, axis=1)
    interior = np.zeros_like(norms, dtype=bool)
    interior[1:-1] = True
    sel = interior & (norms > state_floor)
    if not sel.any():
        return {"min_decrement_margin": float("inf"), "pass": True, "n_checked": 0}
    margin = float((-resid[sel]).min())
    return {"min_decrement_margin": margin, "pass": bool(margin > -10.0 * h), "n_checked": int(sel.sum())}


def export_trajectory(trajectory: Trajectory, path) -> None:
    """Delimited-text time series (time, states, u, u^F, cost, V) for plotting."""
    cols = [trajectory.time[:, None], trajectory.states, trajectory.controls,
            trajectory.applied_controls, trajectory.cost[:, None]]
    header = (
        ["time"]
        + [f"x{i}" for i in range(trajectory.states.shape[1])]
        + [f"u{i}" for i in range(trajectory.controls.shape[1])]
        + [f"uF{i}" for i in range(trajectory.applied_controls.shape[1])]
        + ["cost"]
    )
    if trajectory.lyapunov is not None:
        cols.append(trajectory.lyapunov[:, None])
        header.append("lyapunov")
    data = np.hstack(cols)
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="")
