import numpy as np
import pytest

from app.models.dae_model import (
    RingOscillatorParams,
    make_input_harmonic,
    make_linear_test_model,
    make_ring_oscillator,
)
from app.services.initializer import periodic_seed
from app.services.mol_assembly import MolSystem, Optimality, PhaseAlgebraic, PhaseDifferential
from app.services.stencils import bdf2


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def ring3():
    """Three-stage benchmark oscillator with b(t) = 1 + 0.5 sin(2 pi t)."""
    params = RingOscillatorParams(k=3, C=1e-6, R=1e3, G=-5.0, input=make_input_harmonic(1.0, 0.5))
    return make_ring_oscillator(params)


@pytest.fixture(scope="session")
def linear_model():
    return make_linear_test_model(frequency=1.0)


@pytest.fixture(scope="session")
def ring3_seeds(ring3):
    """Periodic seeds of the three-stage oscillator, computed once per line count."""
    cache = {}

    def get(m: int, algebraic: bool = False):
        if (m, algebraic) not in cache:
            cache[m, algebraic] = periodic_seed(ring3, 1.0, m, algebraic=algebraic)
        return cache[m, algebraic]
    return get


@pytest.fixture(scope="session")
def linear_seed(linear_model):
    return periodic_seed(linear_model, 1.0, 20)


@pytest.fixture(scope="session")
def linear_seed_algebraic(linear_model):
    """Seed whose line 0 sits on an upward zero crossing of z[0]."""
    return periodic_seed(linear_model, 1.0, 20, algebraic=True)


def make_coupling(kind: str, n_y: int, n_z: int):
    """Coupling by short name: phase, phase_algebraic, opt_a, opt_b, opt_c."""
    if kind == "phase":
        return PhaseDifferential(component=0)
    if kind == "phase_algebraic":
        return PhaseAlgebraic(component=0)
    on_y = 1.0 if kind in ("opt_a", "opt_b") else 0.0
    on_z = 1.0 if kind in ("opt_a", "opt_c") else 0.0
    return Optimality(w_y=np.full(n_y, on_y), w_z=np.full(n_z, on_z))


def make_system(model, m: int, kind: str, stencil=None) -> MolSystem:
    return MolSystem(model, stencil or bdf2(), m, make_coupling(kind, model.n_y, model.n_z))
