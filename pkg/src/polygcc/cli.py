"""Command-line pipeline: validate, synthesize, verify, simulate, demo.

Exit codes: 0 success, 1 input/validation error, 2 infeasible synthesis,
3 verification or Monte Carlo failure, 4 internal/numerical error.  Errors are
mirrored as JSON objects on stderr.  Every artifact embeds the input content
hash, the seed, and the tool version; no timestamps, so identical inputs
reproduce byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, fixtures, sim, verify as verify_mod
from .lmi import AssumptionViolation
from .model import (
    ModelError,
    load_system,
    save_system,
    validate_system,
)
from .sdp import SolverOptions
from .synthesis import (
    SynthesisOptions,
    ValidationFailure,
    expected_cost_bound,
    load_result,
    save_result,
    synthesize_reliable_gcc,
    synthesize_stabilizing,
)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_VERIFY = 3
EXIT_INTERNAL = 4


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str):
        super().__init__(message)
        self.code = code
        self.kind = kind


def _emit_error(err: CliError) -> None:
    payload = {"error": {"code": err.code, "kind": err.kind, "message": str(err)}}
    print(json.dumps(payload), file=sys.stderr)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _metadata(input_path, seed, extra=None) -> dict:
    meta = {
        "input_sha256": _sha256(input_path),
        "seed": seed,
        "tool_version": __version__,
    }
    if extra:
        meta.update(extra)
    return meta


def _load_bundle(path):
    try:
        return load_system(path)
    except FileNotFoundError as exc:
        raise CliError(EXIT_INPUT, "input", f"cannot read {path}: {exc}")
    except (json.JSONDecodeError, ModelError) as exc:
        raise CliError(EXIT_INPUT, "input", f"malformed system description: {exc}")


def _synthesis_options(args) -> SynthesisOptions:
    return SynthesisOptions(
        epsilon=args.epsilon,
        parameter_independent=args.parameter_independent,
        optimize_trace=args.optimize_trace,
        solver=SolverOptions(tolerance=args.tolerance),
    )


def _cmd_validate(args) -> int:
    system, cost, failures = _load_bundle(args.input)
    report = validate_system(system, cost, failures)
    print(report.summary())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    return EXIT_OK if report.stability_ok else EXIT_INPUT


def _run_synthesis(system, cost, failures, mode, options):
    if mode == "reliable":
        if cost is None or failures is None:
            raise CliError(
                EXIT_INPUT, "input", "reliable mode needs cost weights and a failure model"
            )
        try:
            return synthesize_reliable_gcc(system, cost, failures, options=options)
        except AssumptionViolation as exc:
            raise CliError(EXIT_INPUT, "assumption", str(exc))
        except ValidationFailure as exc:
            raise CliError(EXIT_INPUT, "validation", str(exc))
    try:
        return synthesize_stabilizing(system, options=options)
    except ValidationFailure as exc:
        raise CliError(EXIT_INPUT, "validation", str(exc))


def _cmd_synthesize(args) -> int:
    system, cost, failures = _load_bundle(args.input)
    result = _run_synthesis(system, cost, failures, args.mode, _synthesis_options(args))
    meta = _metadata(args.input, args.seed, {"mode": args.mode, "command": "synthesize"})
    if args.out:
        save_result(result, args.out, metadata=meta)
    if not result.feasible:
        raise CliError(
            EXIT_INFEASIBLE,
            "infeasible",
            f"synthesis infeasible for subsystems {list(result.infeasible_subsystems)}",
        )
    for design in result.designs:
        print(f"subsystem {design.index}: margin {design.margin:.3e}, gain {design.gain.tolist()}")
    if result.mode == "reliable":
        print(f"expected cost bound: {expected_cost_bound(result):.6f}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    system, cost, failures = _load_bundle(args.input)
    try:
        result, _ = load_result(args.result)
    except FileNotFoundError as exc:
        raise CliError(EXIT_INPUT, "input", f"cannot read {args.result}: {exc}")
    except (json.JSONDecodeError, KeyError) as exc:
        raise CliError(EXIT_INPUT, "input", f"malformed result file: {exc}")
    grids = verify_mod.GridOptions(n_samples=args.grid_samples, seed=args.seed)
    report = verify_mod.verify_closed_loop(result, system, cost, failures, grids)
    meta = _metadata(args.input, args.seed, {"result_sha256": _sha256(args.result)})
    if args.out:
        verify_mod.save_report(report, args.out, metadata=meta)
    summary = report.summary()
    for cat, worst in sorted(summary.items()):
        print(f"{cat}: worst margin {worst:.3e}")
    if report.vacuous:
        print("nothing to verify (infeasible result)")
        return EXIT_VERIFY
    if not report.passed:
        fails = report.failures()
        print(f"{len(fails)} checks failed; first: {fails[0].name} at {fails[0].point}")
        return EXIT_VERIFY
    print("all checks passed")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    system, cost, failures = _load_bundle(args.input)
    try:
        result, _ = load_result(args.result)
    except FileNotFoundError as exc:
        raise CliError(EXIT_INPUT, "input", f"cannot read {args.result}: {exc}")
    if cost is None or failures is None:
        raise CliError(EXIT_INPUT, "input", "simulation needs cost weights and a failure model")
    config = sim.McConfig(
        n_samples=args.mc_samples, horizon=args.horizon, step=args.step, seed=args.seed
    )
    summary = sim.monte_carlo_cost(result, system, cost, failures, config)
    meta = _metadata(args.input, args.seed, {"result_sha256": _sha256(args.result)})
    if args.out:
        payload = {"metadata": meta, "summary": summary.to_dict()}
        Path(args.out).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")
    print(
        f"{summary.n_samples} samples: max J(T)+V(T) = {summary.max_total:.6f}, "
        f"{len(summary.violations)} bound violations, "
        f"{summary.horizon_warnings} horizon warnings"
    )
    if args.trajectory_out:
        alpha = np.eye(result.vertex_count)[0]
        rng = np.random.default_rng([args.seed, 0])
        inter = sim.sample_interconnection(system, "constant", rng)
        fail = sim.sample_failure(failures, "outage", rng, horizon=args.horizon)
        x0 = rng.standard_normal(sum(result.state_dims))
        lyap = [result.lyapunov_at(i, alpha) for i in range(system.n_subsystems)]
        traj = sim.simulate(
            system, list(result.gains()), alpha, inter, fail, x0,
            args.horizon, args.step, cost=cost, failures=failures, lyapunov=lyap,
        )
        sim.export_trajectory(traj, args.trajectory_out)
    return EXIT_OK if summary.certified else EXIT_VERIFY


def _cmd_demo(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    system, cost, failures = fixtures.demo_system()
    system_path = out_dir / "system.json"
    save_system(system_path, system, cost, failures)

    report = validate_system(system, cost, failures)
    print(f"validate: {report.summary()}")
    if not report.reliable_ok:
        raise CliError(EXIT_INPUT, "validation", report.summary())

    options = SynthesisOptions(
        epsilon=args.epsilon,
        optimize_trace=args.optimize_trace,
        solver=SolverOptions(tolerance=args.tolerance),
    )
    result = _run_synthesis(system, cost, failures, "reliable", options)
    meta = _metadata(system_path, args.seed, {"mode": "reliable", "command": "demo"})
    save_result(result, out_dir / "result.json", metadata=meta)
    if not result.feasible:
        raise CliError(EXIT_INFEASIBLE, "infeasible", "demo fixture unexpectedly infeasible")
    print(f"synthesize: margins {[round(d.margin, 4) for d in result.designs]}, "
          f"expected cost bound {expected_cost_bound(result):.4f}")

    grids = verify_mod.GridOptions(n_samples=args.grid_samples, seed=args.seed)
    vreport = verify_mod.verify_closed_loop(result, system, cost, failures, grids)
    verify_mod.save_report(vreport, out_dir / "verify_report.json", metadata=meta)
    print(f"verify: {'pass' if vreport.passed else 'FAIL'} "
          f"(worst certificate margin {vreport.worst('certificate'):.3e})")
    if not vreport.passed:
        raise CliError(EXIT_VERIFY, "verify", "closed-loop verification failed")

    config = sim.McConfig(
        n_samples=args.mc_samples, horizon=args.horizon, step=args.step, seed=args.seed
    )
    summary = sim.monte_carlo_cost(result, system, cost, failures, config)
    (out_dir / "mc_summary.json").write_text(
        json.dumps({"metadata": meta, "summary": summary.to_dict()}, indent=2, sort_keys=True)
        + "\n",
        "utf-8",
    )
    print(
        f"simulate: {summary.n_samples} samples, max J(T)+V(T) {summary.max_total:.4f}, "
        f"{len(summary.violations)} violations"
    )
    if not summary.certified:
        raise CliError(EXIT_VERIFY, "monte-carlo", "cost bound violated in simulation")

    alpha = np.eye(result.vertex_count)[0]
    rng = np.random.default_rng([args.seed, 0])
    inter = sim.sample_interconnection(system, "constant", rng)
    fail = sim.sample_failure(failures, "outage", rng, horizon=args.horizon)
    x0 = rng.standard_normal(sum(result.state_dims))
    lyap = [result.lyapunov_at(i, alpha) for i in range(system.n_subsystems)]
    traj = sim.simulate(
        system, list(result.gains()), alpha, inter, fail, x0, args.horizon, args.step,
        cost=cost, failures=failures, lyapunov=lyap,
    )
    sim.export_trajectory(traj, out_dir / "trajectory.csv")
    descent = sim.lyapunov_descent_check(traj, result)
    print(f"descent check: {'pass' if descent['pass'] else 'FAIL'} "
          f"(min decrement margin {descent['min_decrement_margin']:.4f})")
    if not descent["pass"]:
        raise CliError(EXIT_VERIFY, "descent", "Lyapunov descent check failed")
    print(f"demo artifacts written to {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polygcc",
        description="Decentralized guaranteed-cost controller synthesis for "
        "interconnected polytopic systems",
    )
    parser.add_argument("--version", action="version", version=f"polygcc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_input=True):
        if needs_input:
            p.add_argument("input", help="system description JSON file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--epsilon", type=float, default=1e-6,
                       help="strictness margin scale for the matrix inequalities")
        p.add_argument("--tolerance", type=float, default=1e-8, help="solver tolerance")

    p = sub.add_parser("validate", help="check the structural assumptions")
    p.add_argument("input")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("synthesize", help="solve the vertex LMI families")
    common(p)
    p.add_argument("--mode", choices=("stability", "reliable"), default="reliable")
    p.add_argument("--optimize-trace", action="store_true")
    p.add_argument("--parameter-independent", action="store_true")
    p.add_argument("--out", default=None, help="result file path")
    p.set_defaults(func=_cmd_synthesize)

    p = sub.add_parser("verify", help="grid-verify a synthesis result")
    common(p)
    p.add_argument("result", help="result JSON file")
    p.add_argument("--grid-samples", type=int, default=50)
    p.add_argument("--out", default=None, help="verification report path")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("simulate", help="Monte Carlo closed-loop bound check")
    common(p)
    p.add_argument("result", help="result JSON file")
    p.add_argument("--mc-samples", type=int, default=500)
    p.add_argument("--horizon", type=float, default=20.0)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--out", default=None, help="Monte Carlo summary path")
    p.add_argument("--trajectory-out", default=None, help="CSV export of one trajectory")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("demo", help="full pipeline on the built-in fixture")
    common(p, needs_input=False)
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--optimize-trace", action="store_true")
    p.add_argument("--grid-samples", type=int, default=50)
    p.add_argument("--mc-samples", type=int, default=120)
    p.add_argument("--horizon", type=float, default=20.0)
    p.add_argument("--step", type=float, default=1e-3)
    p.set_defaults(func=_cmd_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as err:
        _emit_error(err)
        return err.code
    except Exception as exc:  # unexpected: report as internal error
        err = CliError(EXIT_INTERNAL, "internal", f"{type(exc).__name__}: {exc}")
        _emit_error(err)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
