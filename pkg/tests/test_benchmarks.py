"""Full-size benchmark runs. Minutes each; run with ``pytest -m slow``."""
from pathlib import Path

import numpy as np
import pytest

from app.services.experiment_service import cmd_compare, run_scenario
from app.services.postproc import frequency_diff, functional_pointwise
from app.services.storage_service import load_scenario

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def ring11_runs():
    phase = load_scenario(str(CONFIG_DIR / "ring11_phase.toml"))
    optimal = load_scenario(str(CONFIG_DIR / "ring11_opt_b.toml"))
    return run_scenario(phase), run_scenario(optimal), optimal.weights()


def test_seed_frequency_near_thirty_megahertz(ring11_runs):
    (seed, _), _, _ = ring11_runs
    assert seed.nu_seed == pytest.approx(3e7, rel=0.2)


def test_phase_and_optimality_frequencies_agree(ring11_runs):
    (_, phase), (_, optimal), _ = ring11_runs
    assert np.all(phase.newton_iterations <= 25)
    assert frequency_diff(phase, optimal).max_rel <= 1e-3


def test_optimality_run_has_the_smaller_functional(ring11_runs):
    (_, phase), (_, optimal), (w_y, w_z) = ring11_runs
    j_phase = functional_pointwise(phase, w_y, w_z).values
    j_opt = functional_pointwise(optimal, w_y, w_z).values
    assert np.all(j_opt <= j_phase * (1 + 1e-2))


def test_three_stage_phase_run_differs_most_from_weights_a(tmp_path):
    names = ["ring3_opt_a", "ring3_phase", "ring3_opt_b", "ring3_opt_c"]
    scenarios = [load_scenario(str(CONFIG_DIR / f"{name}.toml")) for name in names]
    summary = cmd_compare(scenarios, out_dir=str(tmp_path))
    assert summary.names == ["opt_a", "phase", "opt_b", "opt_c"]
    phase, opt_b, opt_c = summary.max_rel[1:]
    assert phase > opt_b
    assert phase > opt_c
