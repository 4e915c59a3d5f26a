import math

import numpy as np
import pytest
from pydantic import ValidationError

from app.core.exceptions import ModelError
from app.models.dae_model import (
    LinearTestModel,
    RingOscillatorParams,
    check_jacobians,
    make_input_constant,
    make_input_harmonic,
    make_input_sinsq,
    make_ring_oscillator,
    solve_algebraic,
)


def _fd(fun, t, h=1e-6):
    return (fun(t + h) - fun(t - h)) / (2 * h)


@pytest.mark.parametrize("factory,period,amplitude", [
    (make_input_harmonic, 1.0, 0.5),
    (make_input_sinsq, 1e-4, 2.0),
])
def test_input_derivative_matches_finite_differences(factory, period, amplitude):
    signal = factory(period, amplitude)
    for t in np.linspace(0.0, period, 7):
        h = period * 1e-6
        assert signal.db_dt(t) == pytest.approx(_fd(signal.b, t, h), rel=1e-6, abs=1e-6 / period)


def test_input_values():
    harmonic = make_input_harmonic(1.0, 0.5)
    assert harmonic.b(0.0) == 1.0
    assert harmonic.b(0.25) == pytest.approx(1.5)
    sinsq = make_input_sinsq(1e-4, 2.0)
    assert sinsq.b(0.0) == 1.0
    assert sinsq.b(0.25e-4) == pytest.approx(3.0)
    const = make_input_constant(0.7)
    assert const.constant and const.b(12.0) == 0.7 and const.db_dt(3.0) == 0.0


@pytest.mark.parametrize("period", [0.0, -1.0])
def test_input_rejects_non_positive_period(period):
    with pytest.raises(ModelError):
        make_input_harmonic(period)


@pytest.mark.parametrize("update", [{"k": 4}, {"k": 0}, {"C": 0.0}, {"R": -1.0}])
def test_ring_params_validation(update):
    with pytest.raises(ValidationError):
        RingOscillatorParams(**update)


@pytest.mark.parametrize("k", [3, 5, 11])
def test_ring_jacobians(k, rng):
    params = RingOscillatorParams(k=k, C=1e-6, R=1e3, input=make_input_harmonic(1.0, 0.5))
    model = make_ring_oscillator(params)
    y = rng.uniform(-1, 1, k)
    z = rng.uniform(-1e-3, 1e-3, k)
    assert check_jacobians(model, 0.3, y, z) < 1e-6


def test_linear_jacobians(linear_model, rng):
    assert check_jacobians(linear_model, 0.1, rng.normal(size=2), rng.normal(size=1)) < 1e-8


def test_check_jacobians_rejects_bad_step(linear_model):
    with pytest.raises(ValueError):
        check_jacobians(linear_model, 0.0, np.zeros(2), np.zeros(1), h_fd=0.0)


def test_ring_structure(ring3):
    """Stage j is driven by its predecessor; stage 0 by the last one."""
    y = np.array([0.1, -0.2, 0.3])
    gy = ring3.dg_dy(0.0, y, np.zeros(3))
    assert gy[0, 2] != 0 and gy[1, 0] != 0 and gy[2, 1] != 0
    assert gy[0, 1] == 0 and gy[1, 2] == 0 and gy[2, 0] == 0
    np.testing.assert_allclose(np.diag(gy), 1.0)


def test_ring_capacitance_follows_input(ring3):
    z = np.full(3, 1e-3)
    f = ring3.f(0.25, np.zeros(3), z)
    assert f[0] == pytest.approx(1e-3 / (1e-6 * 1.5))
    assert f[1] == pytest.approx(1e3)


def test_solve_algebraic_converges_and_is_idempotent(ring3, rng):
    y = rng.uniform(-1, 1, 3)
    z = solve_algebraic(ring3, 0.0, y, np.zeros(3))
    assert np.max(np.abs(ring3.g(0.0, y, z))) <= 1e-12
    again = solve_algebraic(ring3, 0.0, y, z)
    np.testing.assert_array_equal(again, z)


def test_frozen_input_model_is_autonomous(ring3):
    assert not ring3.autonomous
    frozen = ring3.with_constant_input(1.0)
    assert frozen.autonomous
    assert frozen.params.C == ring3.params.C


def test_reduced_jacobian(ring3, rng):
    y = rng.uniform(-1, 1, 3)
    z = solve_algebraic(ring3, 0.0, y, np.zeros(3))
    expected = -np.diag(1.0 / np.full(3, 1e-6)) @ ring3.dg_dy(0.0, y, z) / 1e3
    np.testing.assert_allclose(ring3.reduced_jacobian(0.0, y, z), expected, rtol=1e-12)


def test_linear_model_constraints(linear_model):
    lin = linear_model.linear_constraints
    assert lin is not None
    np.testing.assert_array_equal(lin.G_z, [[2.0]])
    omega = 2 * math.pi
    np.testing.assert_allclose(linear_model.df_dy(0, None, None), [[0, omega], [-omega, 0]])


def test_linear_model_rejects_bad_shapes():
    with pytest.raises(ModelError):
        LinearTestModel(np.eye(2), np.zeros((3, 1)), np.ones((1, 2)), np.eye(1))
    with pytest.raises(ModelError):
        LinearTestModel(np.eye(2), np.zeros((2, 1)), np.ones((1, 2)), np.zeros((1, 1)))


def test_ring_has_nonlinear_constraints(ring3):
    assert ring3.linear_constraints is None
