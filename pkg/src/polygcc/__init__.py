"""Reliable decentralized guaranteed-cost control for interconnected polytopic systems.

Pipeline: describe the plant (`model`), build the vertex matrix inequalities
(`lmi`), solve them (`sdp`), recover gains and Lyapunov certificates with cost
bounds (`synthesis`), verify everything independently (`verify`), and stress
the closed loop in simulation (`sim`).  The `polygcc` console script ties the
stages together.
"""

__version__ = "0.1.0"

from .model import (
    CostSpec,
    FailureModel,
    InterconnectedSystem,
    InterconnectionLink,
    ModelError,
    PolytopicSubsystem,
    SimplexPoint,
    ValidationReport,
    coupling_matrix,
    evaluate_at_alpha,
    load_system,
    save_system,
    validate_system,
)
from .lmi import (
    AffineLmi,
    AssumptionViolation,
    LmiTerm,
    VarSpec,
    build_reliable_lmis,
    build_stability_lmis,
    build_trace_epigraph,
    theorem1_primal,
    theorem1_slack_vertex,
)
from .sdp import SdpProblem, SdpSolution, SolverOptions, solve
from .synthesis import (
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
from .verify import (
    GridOptions,
    Theorem1Instance,
    VerificationReport,
    projection_oracle,
    schur_oracle,
    theorem1_roundtrip,
    verify_closed_loop,
)
from .sim import (
    FailureRealization,
    InterconnectionRealization,
    McConfig,
    McSummary,
    Trajectory,
    lyapunov_descent_check,
    monte_carlo_cost,
    sample_failure,
    sample_interconnection,
    simulate,
)
