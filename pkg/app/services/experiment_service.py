"""
Experiment orchestration behind the CLI: build a scenario's model and MOL
system, seed, initialise, integrate or analyse, and write the result files.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import GridMismatchError, MpdaeError, TrajectoryFormatError
from app.models.dae_model import (
    InputSignal,
    RingOscillatorParams,
    SemiExplicitModel,
    make_input_constant,
    make_input_harmonic,
    make_input_sinsq,
    make_linear_test_model,
    make_ring_oscillator,
)
from app.schemas import InputSpec, OptimalitySpec, PhaseSpec, ScenarioConfig, expand_weights
from app.services import storage_service
from app.services.index_lab import CSV_FIELDS, IndexReport, determine_index, sweep_index
from app.services.initializer import PeriodicSeed, consistent_init, periodic_seed
from app.services.integrator import Trajectory, integrate
from app.services.mol_assembly import (
    CouplingCondition,
    GridState,
    MolSystem,
    Optimality,
    PhaseAlgebraic,
    PhaseDifferential,
    constant_eta,
)
from app.services.postproc import frequency_diff, functional_pointwise, reconstruct
from app.services.stencils import stencil_by_name

logger = logging.getLogger(__name__)


def build_input(spec: InputSpec) -> InputSignal:
    if spec.kind == "harmonic":
        return make_input_harmonic(spec.period, 0.5 if spec.amplitude is None else spec.amplitude)
    if spec.kind == "sinsq":
        return make_input_sinsq(spec.period, 2.0 if spec.amplitude is None else spec.amplitude)
    return make_input_constant(spec.value)


def build_model(scenario: ScenarioConfig) -> SemiExplicitModel:
    spec = scenario.model
    if spec.kind == "ring_oscillator":
        params = RingOscillatorParams(k=spec.k, C=spec.C, R=spec.R, G=spec.G, input=build_input(scenario.input))
        return make_ring_oscillator(params)
    return make_linear_test_model(frequency=spec.frequency, damping=spec.damping)


def build_coupling(scenario: ScenarioConfig) -> CouplingCondition:
    c = scenario.coupling
    if isinstance(c, PhaseSpec):
        eta = constant_eta(c.eta0)
        if c.variable == "differential":
            return PhaseDifferential(component=c.index, eta=eta)
        return PhaseAlgebraic(component=c.index, eta=eta)
    w_y, w_z = scenario.weights()
    return Optimality(w_y=np.array(w_y), w_z=np.array(w_z))


def build_system(scenario: ScenarioConfig) -> MolSystem:
    return MolSystem(
        model=build_model(scenario),
        stencil=stencil_by_name(scenario.stencil),
        m=scenario.m,
        coupling=build_coupling(scenario),
    )


def _seed_crossing(scenario: ScenarioConfig) -> Dict[str, object]:
    """Line 0 of the seed sits where the pinned component meets eta0."""
    c = scenario.coupling
    if isinstance(c, PhaseSpec):
        return {"component": c.index, "algebraic": c.variable == "algebraic", "level": c.eta0}
    return {"component": 0}


def initial_point(scenario: ScenarioConfig, system: MolSystem, close_frequency: Optional[bool] = None) -> Tuple[PeriodicSeed, GridState, GridState]:
    """Periodic seed followed by consistent initialisation."""
    seed = periodic_seed(system.model, scenario.b_frozen, system.m, **_seed_crossing(scenario))
    if close_frequency is None:
        close_frequency = scenario.seed_mode == "consistent"
    state, velocity = consistent_init(system, seed.to_guess(), close_frequency=close_frequency)
    return seed, state, velocity


def run_scenario(scenario: ScenarioConfig) -> Tuple[PeriodicSeed, Trajectory]:
    system = build_system(scenario)
    seed, state, velocity = initial_point(scenario, system)
    trajectory = integrate(system, (state, velocity), scenario.integrator)
    return seed, trajectory


def _out_dir(scenario: ScenarioConfig, out_dir: Optional[str]) -> Path:
    path = Path(out_dir or scenario.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_simulate(scenario: ScenarioConfig, out_dir: Optional[str] = None) -> List[Path]:
    """
    Seed, initialise and integrate one scenario, then write its files.

    Args:
        scenario (ScenarioConfig): Validated scenario.
        out_dir (str, optional): Overrides ``scenario.output_dir``.

    Returns:
        List[Path]: Files written.
    """
    try:
        seed, traj = run_scenario(scenario)
    except MpdaeError as e:
        logger.error(f"Simulation of '{scenario.name}' failed in stage {e.stage}: {e}", exc_info=True)
        raise

    path = _out_dir(scenario, out_dir)
    written = [
        storage_service.write_trajectory_csv(path / "trajectory.csv", traj),
        storage_service.write_frequency_csv(path / "frequency.csv", traj),
        storage_service.write_diagnostics_csv(path / "diagnostics.csv", traj),
        storage_service.write_gnuplot_stub(path / "frequency.gp", "frequency.csv", "local frequency", "nu", [3], ["nu"], xcol=2),
        storage_service.write_meta(path, scenario, extra={
            "nu_seed": seed.nu_seed,
            "seed_period": seed.period,
            "max_newton_iterations": int(traj.newton_iterations.max()),
            "max_constraint_residual": float(traj.constraint_residual.max()),
            "max_hidden_drift": float(traj.hidden_drift.max()),
        }),
    ]
    logger.info(f"Simulation '{scenario.name}' written to {path}")
    return written


def cmd_index(scenario: ScenarioConfig, out_dir: Optional[str] = None, sweep: int = 0) -> List[IndexReport]:
    """
    Index analysis at the consistent initial point, optionally followed by a
    sweep over every ``sweep``-th point of an integrated trajectory.

    The initial point is always closed for the frequency, whatever the
    scenario's seed mode.
    """
    system = build_system(scenario)
    try:
        _, state, velocity = initial_point(scenario, system, close_frequency=True)
        reports = [determine_index(system, 0.0, state, velocity)]
        if sweep > 0:
            traj = integrate(system, (state, velocity), scenario.integrator)
            reports += sweep_index(system, traj, every=sweep)
    except MpdaeError as e:
        logger.error(f"Index analysis of '{scenario.name}' failed in stage {e.stage}: {e}", exc_info=True)
        raise

    path = _out_dir(scenario, out_dir)
    (path / "index_report.txt").write_text(reports[0].to_text(), encoding="utf-8")
    storage_service.write_rows(
        path / "index.csv", CSV_FIELDS, ([r.to_csv_row()[k] for k in CSV_FIELDS] for r in reports)
    )
    logger.info(f"Index report for '{scenario.name}' written to {path}")
    return reports


@dataclass(frozen=True)
class CompareSummary:
    names: List[str]
    max_rel: List[float]
    mean_rel: List[float]


def _check_compatible(scenarios: Sequence[ScenarioConfig]) -> None:
    ref = scenarios[0]
    for s in scenarios[1:]:
        same = (
            s.m == ref.m
            and s.model.n_y == ref.model.n_y
            and s.model.n_z == ref.model.n_z
            and s.integrator.steps == ref.integrator.steps
            and s.integrator.t_end == ref.integrator.t_end
        )
        if not same:
            raise GridMismatchError(f"scenario '{s.name}' does not share grid and time settings with '{ref.name}'")


def _unique_names(scenarios: Sequence[ScenarioConfig]) -> List[str]:
    names = []
    for i, s in enumerate(scenarios):
        names.append(s.name if s.name not in names else f"{s.name}_{i}")
    return names


def _trajectory_only(scenario: ScenarioConfig) -> Trajectory:
    return run_scenario(scenario)[1]


def cmd_compare(scenarios: Sequence[ScenarioConfig], out_dir: Optional[str] = None, jobs: int = 1) -> CompareSummary:
    """
    Run several scenarios on one grid and compare their frequencies and
    oscillation functionals against the first one.

    Args:
        scenarios (Sequence[ScenarioConfig]): At least two scenarios.
        out_dir (str, optional): Target directory; defaults to the first
            scenario's output_dir.
        jobs (int): Worker processes; 1 runs in-process.

    Returns:
        CompareSummary: Max and mean relative frequency differences.
    """
    if len(scenarios) < 2:
        raise GridMismatchError("compare needs at least two scenarios")
    _check_compatible(scenarios)
    names = _unique_names(scenarios)

    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                trajectories = list(pool.map(_trajectory_only, scenarios))
        else:
            trajectories = [_trajectory_only(s) for s in scenarios]
    except MpdaeError as e:
        logger.error(f"Comparison run failed in stage {e.stage}: {e}", exc_info=True)
        raise

    ref = trajectories[0]
    diffs = [frequency_diff(ref, traj) for traj in trajectories]

    weight_spec = next((s.coupling for s in scenarios if isinstance(s.coupling, OptimalitySpec)), OptimalitySpec(case="b"))
    w_y, w_z = expand_weights(weight_spec, ref.n_y, ref.n_z)
    functionals = [functional_pointwise(traj, w_y, w_z) for traj in trajectories]

    path = _out_dir(scenarios[0], out_dir)
    tn = storage_service.normalised_times(ref.times)
    fmt = storage_service.fmt
    header = ["t", "t_normalised"] + [f"nu_{n}" for n in names]
    header += [f"absdiff_{n}" for n in names[1:]] + [f"reldiff_{n}" for n in names[1:]]
    rows = []
    for k, t in enumerate(ref.times):
        row = [fmt(t), fmt(tn[k])] + [fmt(traj.nu[k]) for traj in trajectories]
        row += [fmt(d.abs_diff[k]) for d in diffs[1:]] + [fmt(d.rel_diff[k]) for d in diffs[1:]]
        rows.append(row)
    storage_service.write_rows(path / "frequency_comparison.csv", header, rows)
    n = len(names)
    storage_service.write_gnuplot_stub(
        path / "frequency_comparison.gp", "frequency_comparison.csv", f"|nu - nu_{names[0]}|", "difference",
        list(range(3 + n, 3 + n + n - 1)), [f"{x} vs {names[0]}" for x in names[1:]], xcol=2,
    )

    storage_service.write_rows(
        path / "functional.csv",
        ["t", "t_normalised"] + [f"J_{n}" for n in names],
        ([fmt(t), fmt(tn[k])] + [fmt(f.values[k]) for f in functionals] for k, t in enumerate(ref.times)),
    )
    storage_service.write_gnuplot_stub(
        path / "functional.gp", "functional.csv", "oscillation functional", "J",
        list(range(3, 3 + n)), names, xcol=2,
    )

    summary = CompareSummary(
        names=names,
        max_rel=[d.max_rel for d in diffs],
        mean_rel=[d.mean_rel for d in diffs],
    )
    lines = [f"reference: {names[0]}", f"weights: w_y={w_y} w_z={w_z}"]
    for name, d in zip(names[1:], diffs[1:]):
        lines.append(f"{name}: max_abs={d.max_abs!r} mean_abs={d.mean_abs!r} max_rel={d.max_rel!r} mean_rel={d.mean_rel!r}")
    (path / "compare_summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Comparison of {n} scenarios written to {path}")
    return summary


def cmd_reconstruct(trajectory_path: str, out_dir: Optional[str] = None, refine: int = 20) -> List[Path]:
    """Reconstruct x(t) and Psi(t) from a trajectory.csv."""
    stencil = "bdf2"
    meta = Path(trajectory_path).parent / "meta.txt"
    if meta.exists():
        stencil = storage_service.load_scenario(str(meta)).stencil
    traj = storage_service.read_trajectory_csv(trajectory_path, stencil=stencil)
    if traj.times.size < 2:
        raise TrajectoryFormatError("reconstruction needs at least two data rows", line_number=3)
    signal = reconstruct(traj, refine=refine)

    path = Path(out_dir) if out_dir else Path(trajectory_path).parent
    path.mkdir(parents=True, exist_ok=True)
    fmt = storage_service.fmt
    columns = [f"y[{l}]" for l in range(traj.n_y)] + [f"z[{l}]" for l in range(traj.n_z)]
    theta = np.mod(signal.psi, 1.0)
    written = [
        storage_service.write_rows(
            path / "reconstructed.csv", ["t"] + columns,
            ([fmt(t)] + [fmt(v) for v in vals] for t, vals in zip(signal.times, signal.values)),
        ),
        storage_service.write_rows(
            path / "psi.csv", ["t", "psi", "theta"],
            ([fmt(t), fmt(p), fmt(th)] for t, p, th in zip(signal.times, signal.psi, theta)),
        ),
        storage_service.write_gnuplot_stub(
            path / "reconstructed.gp", "reconstructed.csv", "reconstructed signal", "x", [2], [columns[0]],
        ),
    ]
    logger.info(f"Reconstruction of {trajectory_path} written to {path}")
    return written
