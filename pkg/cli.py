"""
Command-line interface for the MPDAE index lab.
Runs multirate simulations, index analyses, frequency comparisons and signal
reconstructions from TOML scenario files.
"""

import argparse
import sys
from typing import Any, Dict, List, NoReturn, Optional

from pydantic import ValidationError

from app.core.exceptions import GridMismatchError, MpdaeError, ScenarioConfigError, TrajectoryFormatError
from app.core.logging_config import setup_logging
from app.schemas import ScenarioConfig
from app.services import experiment_service, storage_service
from app.services.index_lab import INDEX_LABELS

EXIT_OK = 0
EXIT_DISAGREEMENT = 4
EXIT_CONFIG = 64
EXIT_DATA = 65
EXIT_COMPUTATION = 70


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors, which collides with index 2."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        print(f"❌ Error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def apply_overrides(scenario: ScenarioConfig, args: argparse.Namespace) -> ScenarioConfig:
    """
    Apply command-line overrides to a loaded scenario and validate again.

    Args:
        scenario (ScenarioConfig): Scenario loaded from --config.
        args (argparse.Namespace): Parsed arguments.

    Returns:
        ScenarioConfig: The resolved scenario.

    Notable:
        --weights without --coupling switches the scenario to the optimality
        coupling.
    """
    data: Dict[str, Any] = scenario.model_dump(mode="json")
    if getattr(args, "m", None) is not None:
        data["m"] = args.m
    if getattr(args, "stencil", None) is not None:
        data["stencil"] = args.stencil
    if getattr(args, "steps", None) is not None:
        data["integrator"]["steps"] = args.steps
    if getattr(args, "seed_mode", None) is not None:
        data["seed_mode"] = args.seed_mode

    coupling = getattr(args, "coupling", None)
    weights = getattr(args, "weights", None)
    if coupling is None and weights is not None:
        coupling = "optimality"
    if coupling in ("phase", "phase_algebraic"):
        previous = data["coupling"]
        data["coupling"] = {
            "kind": "phase",
            "variable": "differential" if coupling == "phase" else "algebraic",
            "index": previous.get("index", 0) if previous["kind"] == "phase" else 0,
            "eta0": previous.get("eta0", 0.0) if previous["kind"] == "phase" else 0.0,
        }
    elif coupling == "optimality":
        data["coupling"] = {"kind": "optimality", "case": weights or "b"}

    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ScenarioConfigError(f"invalid overrides:\n{e}") from e


def _load(path: str, args: argparse.Namespace) -> ScenarioConfig:
    return apply_overrides(storage_service.load_scenario(path), args)


def _exit_code_for(error: MpdaeError) -> int:
    if isinstance(error, (ScenarioConfigError, GridMismatchError)):
        return EXIT_CONFIG
    if isinstance(error, TrajectoryFormatError):
        return EXIT_DATA
    return EXIT_COMPUTATION


def run_simulate(args: argparse.Namespace) -> int:
    scenario = _load(args.config, args)
    print(f"▶️  Simulating '{scenario.name}' (m={scenario.m}, {scenario.stencil}, {scenario.coupling.kind})")
    written = experiment_service.cmd_simulate(scenario, args.out)
    print(f"✅ Success: wrote {len(written)} files to {written[0].parent}")
    return EXIT_OK


def run_index(args: argparse.Namespace) -> int:
    scenario = _load(args.config, args)
    print(f"▶️  Index analysis of '{scenario.name}' (m={scenario.m}, {scenario.stencil}, {scenario.coupling.kind})")
    reports = experiment_service.cmd_index(scenario, args.out, sweep=args.sweep)
    report = reports[0]
    print(report.to_text().rstrip())
    if report.scalar_index is not None and report.scalar_index != report.index:
        print(
            f"❌ Error: rank test gives index {report.label} but the scalar criteria give "
            f"{INDEX_LABELS[report.scalar_index]}"
        )
        return EXIT_DISAGREEMENT
    print(f"✅ Index {report.label}")
    return report.index


def run_compare(args: argparse.Namespace) -> int:
    scenarios = [_load(path, args) for path in args.config]
    print(f"▶️  Comparing {len(scenarios)} scenarios")
    summary = experiment_service.cmd_compare(scenarios, args.out, jobs=args.jobs)
    for name, max_rel, mean_rel in zip(summary.names[1:], summary.max_rel[1:], summary.mean_rel[1:]):
        print(f"   {name} vs {summary.names[0]}: max rel {max_rel:.3e}, mean rel {mean_rel:.3e}")
    print("✅ Success: comparison written")
    return EXIT_OK


def run_reconstruct(args: argparse.Namespace) -> int:
    print(f"▶️  Reconstructing from {args.trajectory}")
    written = experiment_service.cmd_reconstruct(args.trajectory, args.out, refine=args.refine)
    print(f"✅ Success: wrote {len(written)} files to {written[0].parent}")
    return EXIT_OK


def _add_scenario_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", type=str, help="Output directory (defaults to the scenario's output_dir).")
    parser.add_argument("--m", type=int, help="Number of lines in the fast time.")
    parser.add_argument("--stencil", choices=["bdf1", "bdf2"], help="Fast-time difference formula.")
    parser.add_argument("--coupling", choices=["phase", "phase_algebraic", "optimality"], help="Frequency coupling condition.")
    parser.add_argument("--weights", choices=["a", "b", "c"], help="Optimality weight case.")
    parser.add_argument("--steps", type=int, help="Number of slow-time steps.")
    parser.add_argument("--seed-mode", dest="seed_mode", choices=["consistent", "nearly_consistent"], help="Close the frequency or keep the seed value.")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        description="Method-of-lines experiments on multirate DAEs with a local frequency.",
        formatter_class=argparse.RawTextHelpFormatter,
    )
    parser.add_argument("--log-level", dest="log_level", type=str, default=None, help="Overrides MPDAE_LOG_LEVEL.")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    # simulate: seed, initialise, integrate, write trajectory files.
    p_sim = subparsers.add_parser("simulate", help="Integrate one scenario.")
    p_sim.add_argument("--config", required=True, type=str, help="Scenario TOML or meta.txt.")
    _add_scenario_overrides(p_sim)

    # index: analysis at the consistent initial point; exit code is the index.
    p_idx = subparsers.add_parser("index", help="Determine the index at the consistent initial point.")
    p_idx.add_argument("--config", required=True, type=str, help="Scenario TOML or meta.txt.")
    p_idx.add_argument("--sweep", type=int, default=0, help="Also analyse every N-th step of an integrated run.")
    _add_scenario_overrides(p_idx)

    # compare: frequency and functional comparison, first scenario is the reference.
    p_cmp = subparsers.add_parser("compare", help="Compare scenarios sharing one grid.")
    p_cmp.add_argument("--config", required=True, nargs="+", type=str, help="Two or more scenario files.")
    p_cmp.add_argument("--jobs", type=int, default=1, help="Worker processes.")
    _add_scenario_overrides(p_cmp)

    # reconstruct: x(t) and Psi(t) from a stored trajectory.
    p_rec = subparsers.add_parser("reconstruct", help="Reconstruct the single-time signal.")
    p_rec.add_argument("trajectory", type=str, help="Path to trajectory.csv.")
    p_rec.add_argument("--out", type=str, help="Output directory (defaults to the trajectory's directory).")
    p_rec.add_argument("--refine", type=int, default=20, help="Dense samples per stored step.")
    return parser


COMMANDS = {
    "simulate": run_simulate,
    "index": run_index,
    "compare": run_compare,
    "reconstruct": run_reconstruct,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Entry point for the CLI application.

    Returns:
        int: Process exit code.

    Notable:
        ``index`` returns the determined index (1, 2 or 3 for ">2 or
        undefined") and 4 when rank and scalar verdicts disagree. Errors map
        to 64 (configuration), 65 (input data, including bare ValueErrors
        from lower layers) and 70 (computation).
    """
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except MpdaeError as e:
        print(f"❌ Error [{e.stage}]: {e}")
        return _exit_code_for(e)
    except ValueError as e:
        print(f"❌ Error [input]: {e}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
