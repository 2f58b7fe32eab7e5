"""Built-in demonstration fixture and seeded random fixture generators."""

from __future__ import annotations

import numpy as np

from .model import (
    CostSpec,
    FailureModel,
    InterconnectedSystem,
    InterconnectionLink,
    PolytopicSubsystem,
)
from .verify import Theorem1Instance


def demo_system():
    """Two coupled scalar subsystems with a full actuator-outage envelope.

    Open-loop stable vertices with moderate cost weights: reliable synthesis
    is feasible even though every actuator may fail completely (gamma = lambda).
    """
    subs = (
        PolytopicSubsystem(
            index=0, state_dim=1, input_dim=1, coupling_dim=1,
            vertex_a=([[-2.0]], [[-3.0]]), vertex_b=([[1.0]], [[0.8]]),
        ),
        PolytopicSubsystem(
            index=1, state_dim=1, input_dim=1, coupling_dim=1,
            vertex_a=([[-2.5]], [[-3.5]]), vertex_b=([[1.0]], [[1.2]]),
        ),
    )
    links = (
        InterconnectionLink(source=1, target=0, gain=[[0.1]], bound=[[0.5]]),
        InterconnectionLink(source=0, target=1, gain=[[0.1]], bound=[[0.5]]),
    )
    system = InterconnectedSystem(subsystems=subs, links=links)
    cost = CostSpec(Q=([[0.2]], [[0.2]]), R=([[0.5]], [[0.5]]))
    failures = FailureModel(lam=([1.0], [1.0]), gamma=([1.0], [1.0]))
    return system, cost, failures


def stability_demo_system():
    """Two scalar subsystems with unit coupling bounds (stabilization fixture)."""
    subs = tuple(
        PolytopicSubsystem(
            index=i, state_dim=1, input_dim=1, coupling_dim=1,
            vertex_a=([[-1.0]], [[-2.0]]), vertex_b=([[1.0]], [[1.0]]),
        )
        for i in range(2)
    )
    links = (
        InterconnectionLink(source=1, target=0, gain=[[0.1]], bound=[[1.0]]),
        InterconnectionLink(source=0, target=1, gain=[[0.1]], bound=[[1.0]]),
    )
    return InterconnectedSystem(subsystems=subs, links=links)


def random_system(
    seed: int,
    *,
    n_subsystems: int = 2,
    max_state_dim: int = 3,
    vertex_count: int = 2,
    input_dim: int = 1,
    open_loop_margin: float = 1.0,
    gain_scale: float = 0.1,
    bound_scale: float = 0.3,
    full_outage: bool = False,
    gamma_range=(0.2, 0.5),
):
    """Seeded random fixture satisfying the structural assumptions by construction.

    open_loop_margin > 0 shifts every vertex to be Hurwitz with at least that
    spectral-abscissa margin; a negative value leaves vertices unstable by up
    to its magnitude (for stabilization exercises).  Complete coupling digraph
    with coupling_dim_i = max_j(state_dim_j), so every aggregate bound W_i is
    generically positive definite.
    """
    rng = np.random.default_rng(seed)
    dims = [int(rng.integers(1, max_state_dim + 1)) for _ in range(n_subsystems)]
    l_dims = [max(dims[j] for j in range(n_subsystems) if j != i) for i in range(n_subsystems)]

    subs = []
    for i in range(n_subsystems):
        n = dims[i]
        va = []
        vb = []
        for _ in range(vertex_count):
            raw = rng.normal(size=(n, n))
            abscissa = float(np.linalg.eigvals(raw).real.max())
            va.append(raw - (abscissa + open_loop_margin) * np.eye(n))
            vb.append(rng.normal(size=(n, input_dim)))
        subs.append(
            PolytopicSubsystem(
                index=i, state_dim=n, input_dim=input_dim, coupling_dim=l_dims[i],
                vertex_a=tuple(va), vertex_b=tuple(vb),
            )
        )
    links = []
    for i in range(n_subsystems):
        for j in range(n_subsystems):
            if i == j:
                continue
            links.append(
                InterconnectionLink(
                    source=j,
                    target=i,
                    gain=gain_scale * rng.normal(size=(dims[i], l_dims[i])),
                    bound=bound_scale * rng.normal(size=(l_dims[i], dims[j])),
                )
            )
    system = InterconnectedSystem(subsystems=tuple(subs), links=tuple(links))

    qs = []
    rs = []
    for i in range(n_subsystems):
        n = dims[i]
        raw = rng.normal(size=(n, n))
        qs.append(0.1 * (np.eye(n) + 0.3 * (raw @ raw.T) / n))
        rs.append(float(rng.uniform(0.3, 0.6)) * np.eye(input_dim))
    cost = CostSpec(Q=tuple(qs), R=tuple(rs))

    lam = tuple(np.ones(input_dim) for _ in range(n_subsystems))
    if full_outage:
        gamma = tuple(np.ones(input_dim) for _ in range(n_subsystems))
    else:
        gamma = tuple(
            rng.uniform(gamma_range[0], gamma_range[1], size=input_dim)
            for _ in range(n_subsystems)
        )
    failures = FailureModel(lam=lam, gamma=gamma)
    return system, cost, failures


def random_theorem1_instance(seed: int, vertex_count: int = 2) -> Theorem1Instance:
    """Seeded generic instance with a negative definite aggregate Q block.

    Vertices are Hurwitz-shifted so a good fraction of draws admit the slack
    construction; feasibility itself is decided by the solver.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    s = int(rng.integers(1, 3))
    g = int(rng.integers(1, 3))
    c = int(rng.integers(1, 3))
    while True:
        s1 = rng.normal(size=(g, g))
        s2 = rng.normal(size=(c, c))
        q11 = -(np.eye(g) + s1 @ s1.T)
        q22 = -(np.eye(c) + s2 @ s2.T)
        q21 = 0.3 * rng.normal(size=(c, g))
        qfull = np.block([[q11, q21.T], [q21, q22]])
        if np.linalg.eigvalsh(qfull).max() < -1e-3:
            break
    a_vertices = []
    b_vertices = []
    for _ in range(vertex_count):
        raw = rng.normal(size=(n, n))
        abscissa = float(np.linalg.eigvals(raw).real.max())
        a_vertices.append(raw - (abscissa + 0.5) * np.eye(n))
        b_vertices.append(rng.normal(size=(n, s)))
    return Theorem1Instance(
        a_vertices=tuple(a_vertices),
        b_vertices=tuple(b_vertices),
        gain_map=0.3 * rng.normal(size=(n, g)),
        c=rng.normal(size=(c, n)),
        q11=q11,
        q21=q21,
        q22=q22,
    )
