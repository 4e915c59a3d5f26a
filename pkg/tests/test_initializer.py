import numpy as np
import pytest

from app.core.exceptions import ConditionViolation, ConsistencyError, PeriodicSeedError
from app.services.initializer import InitGuess, consistent_init, periodic_seed
from app.services.mol_assembly import scaled_residual_norm
from conftest import make_system

COUPLINGS = ["phase", "phase_algebraic", "opt_a", "opt_b", "opt_c"]


def test_linear_seed_recovers_frequency(linear_seed):
    assert linear_seed.nu_seed == pytest.approx(1.0, rel=1e-6)
    assert linear_seed.y.shape == (20, 2) and linear_seed.z.shape == (20, 1)
    # line 0 sits on an upward zero crossing of component 0
    assert abs(linear_seed.y[0, 0]) < 1e-8
    assert linear_seed.y[1, 0] > 0
    # the undamped orbit keeps its radius
    radius = np.hypot(linear_seed.y[:, 0], linear_seed.y[:, 1])
    np.testing.assert_allclose(radius, radius[0], rtol=1e-6)


def test_ring3_seed(ring3_seeds):
    seed = ring3_seeds(20)
    assert seed.nu_seed > 0
    assert seed.y.shape == (20, 3)
    assert abs(seed.y[0, 0]) < 1e-6
    spread = np.ptp(seed.periods[-6:]) / seed.period
    assert spread < 1e-5


def test_seed_rejects_bad_component(linear_model):
    with pytest.raises(PeriodicSeedError):
        periodic_seed(linear_model, 1.0, 10, component=5)


@pytest.mark.parametrize("kind", COUPLINGS)
def test_consistent_init_linear(linear_model, linear_seed, linear_seed_algebraic, kind):
    seed = linear_seed_algebraic if kind == "phase_algebraic" else linear_seed
    sys = make_system(linear_model, 20, kind)
    state, velocity = consistent_init(sys, seed.to_guess())
    assert scaled_residual_norm(sys, 0.0, state, velocity) <= 1e-10
    assert state.nu == pytest.approx(seed.nu_seed, rel=0.1)
    assert velocity.nu == 0.0


@pytest.mark.parametrize("kind", COUPLINGS)
def test_consistent_init_ring3(ring3, ring3_seeds, kind):
    seed = ring3_seeds(20, algebraic=kind == "phase_algebraic")
    sys = make_system(ring3, 20, kind)
    state, velocity = consistent_init(sys, seed.to_guess())
    assert scaled_residual_norm(sys, 0.0, state, velocity) <= 1e-8
    assert np.max(np.abs(sys.line_constraints(0.0, state))) <= 1e-12


def test_consistent_init_is_idempotent(ring3, ring3_seeds):
    sys = make_system(ring3, 20, "opt_a")
    state, _ = consistent_init(sys, ring3_seeds(20).to_guess())
    again, _ = consistent_init(sys, InitGuess(y=state.y, z=state.z, nu=state.nu))
    np.testing.assert_array_equal(again.y, state.y)
    np.testing.assert_array_equal(again.z, state.z)
    assert again.nu == pytest.approx(state.nu, rel=1e-12)


def test_phase_pins_component(linear_model, linear_seed):
    y = linear_seed.y.copy()
    y[0, 0] = 0.05
    sys = make_system(linear_model, 20, "phase")
    state, _ = consistent_init(sys, InitGuess(y=y, z=linear_seed.z))
    assert state.y[0, 0] == 0.0


def test_nearly_consistent_keeps_frequency(linear_model, linear_seed):
    sys = make_system(linear_model, 20, "opt_b")
    state, velocity = consistent_init(sys, linear_seed.to_guess(), close_frequency=False)
    assert state.nu == linear_seed.nu_seed
    assert np.max(np.abs(sys.line_constraints(0.0, state))) <= 1e-12
    with pytest.raises(ConsistencyError):
        consistent_init(sys, InitGuess(y=linear_seed.y), close_frequency=False)


@pytest.mark.parametrize("kind,line,condition", [
    ("phase", [0.0, 0.3], 1),
    # z = -(y_0 + 0.5 y_1) / 2 already vanishes, so pinning leaves the grid flat
    ("phase_algebraic", [0.3, -0.6], 0),
    ("opt_a", [0.0, 0.3], 2),
    ("opt_b", [0.2, 0.3], 2),
])
def test_flat_guess_violates_closure_condition(linear_model, kind, line, condition):
    """A guess without fast-time variation cannot determine the frequency."""
    sys = make_system(linear_model, 10, kind)
    y = np.tile(line, (10, 1))
    with pytest.raises(ConditionViolation) as info:
        consistent_init(sys, InitGuess(y=y))
    assert info.value.condition == condition


def test_guess_shape_is_checked(linear_model):
    sys = make_system(linear_model, 10, "phase")
    with pytest.raises(ConsistencyError):
        consistent_init(sys, InitGuess(y=np.zeros((9, 2))))


def test_algebraic_seed_crossing(linear_model, linear_seed_algebraic):
    assert abs(linear_seed_algebraic.z[0, 0]) < 1e-8
    assert linear_seed_algebraic.z[1, 0] > 0
    with pytest.raises(PeriodicSeedError):
        periodic_seed(linear_model, 1.0, 10, component=1, algebraic=True)
