from app.models.dae_model import (
    InputSignal,
    LinearConstraints,
    LinearTestModel,
    RingOscillator,
    RingOscillatorParams,
    SemiExplicitModel,
    check_jacobians,
    make_input_constant,
    make_input_harmonic,
    make_input_sinsq,
    make_linear_test_model,
    make_ring_oscillator,
    solve_algebraic,
)

__all__ = [
    "InputSignal",
    "LinearConstraints",
    "LinearTestModel",
    "RingOscillator",
    "RingOscillatorParams",
    "SemiExplicitModel",
    "check_jacobians",
    "make_input_constant",
    "make_input_harmonic",
    "make_input_sinsq",
    "make_linear_test_model",
    "make_ring_oscillator",
    "solve_algebraic",
]
