import numpy as np
import pytest
from scipy.integrate import solve_ivp

from app.core.exceptions import GridMismatchError
from app.models.dae_model import solve_algebraic
from app.services.initializer import consistent_init
from app.services.integrator import IntegratorConfig, Trajectory, integrate
from app.services.postproc import frequency_diff, functional_pointwise, reconstruct
from app.services.stencils import bdf2, build_matrix
from conftest import make_system


def make_trajectory(y_lines, z_lines, nu, times, stencil="bdf2") -> Trajectory:
    """Trajectory from (N+1, m, n) line arrays."""
    n = len(times)
    m, n_y = y_lines.shape[1:]
    n_z = z_lines.shape[2]
    states = np.column_stack([y_lines.reshape(n, -1), z_lines.reshape(n, -1), nu])
    return Trajectory(
        times=np.asarray(times, dtype=float), states=states, nu=np.asarray(nu, dtype=float),
        m=m, n_y=n_y, n_z=n_z, stencil=stencil,
    )


def sine_lines(m: int, times, cos_z: bool = True):
    t2 = np.arange(m) / m
    y = np.tile(np.sin(2 * np.pi * t2)[None, :, None], (len(times), 1, 1))
    z = np.tile((np.cos(2 * np.pi * t2) if cos_z else np.zeros(m))[None, :, None], (len(times), 1, 1))
    return y, z


def test_functional_of_a_sine_line_set():
    times = [0.0, 1.0]
    y, z = sine_lines(100, times, cos_z=False)
    series = functional_pointwise(make_trajectory(y, z, [1.0, 1.0], times), [1.0], [0.0])
    np.testing.assert_allclose(series.values, 2 * np.pi ** 2, rtol=1e-2)


def test_functional_matches_direct_sum(rng):
    m, times = 12, [0.0, 0.3, 0.7]
    y = rng.normal(size=(3, m, 2))
    z = rng.normal(size=(3, m, 1))
    w_y, w_z = np.array([0.5, 2.0]), np.array([1.5])
    series = functional_pointwise(make_trajectory(y, z, [1.0, 1.1, 1.2], times), w_y, w_z)

    S = build_matrix(bdf2(), m).S
    for n in range(3):
        dy, dz = S @ y[n], S @ z[n]
        expected = (np.sum(w_y * dy ** 2) + np.sum(w_z * dz ** 2)) / m
        assert series.values[n] == pytest.approx(expected, rel=1e-12)


def test_functional_rejects_wrong_weights():
    times = [0.0, 1.0]
    y, z = sine_lines(8, times)
    with pytest.raises(ValueError):
        functional_pointwise(make_trajectory(y, z, [1.0, 1.0], times), [1.0, 1.0], [0.0])


def test_frequency_diff():
    times = np.linspace(0.0, 1.0, 5)
    y, z = sine_lines(8, times)
    a = make_trajectory(y, z, np.full(5, 2.0), times)
    b = make_trajectory(y, z, np.array([2.0, 2.0, 2.2, 2.0, 2.0]), times)

    same = frequency_diff(a, a)
    assert same.max_abs == 0.0 and same.max_rel == 0.0

    diff = frequency_diff(a, b)
    assert diff.max_abs == pytest.approx(0.2)
    assert diff.max_rel == pytest.approx(0.2 / 2.2)
    assert diff.mean_abs == pytest.approx(0.04)


def test_frequency_diff_needs_one_grid():
    y, z = sine_lines(8, range(3))
    a = make_trajectory(y, z, np.ones(3), [0.0, 0.5, 1.0])
    b = make_trajectory(y, z, np.ones(3), [0.0, 0.4, 1.0])
    with pytest.raises(GridMismatchError):
        frequency_diff(a, b)
    c = make_trajectory(y[:2], z[:2], np.ones(2), [0.0, 1.0])
    with pytest.raises(GridMismatchError):
        frequency_diff(a, c)


def test_reconstruct_constant_frequency():
    times = np.linspace(0.0, 2.0, 11)
    y, z = sine_lines(64, times)
    signal = reconstruct(make_trajectory(y, z, np.full(11, 3.0), times), refine=40)

    np.testing.assert_allclose(signal.psi, 3.0 * signal.times, rtol=1e-12, atol=1e-12)
    # piecewise-linear interpolation across 64 lines
    np.testing.assert_allclose(signal.values[:, 0], np.sin(2 * np.pi * 3.0 * signal.times), atol=5e-3)
    np.testing.assert_allclose(signal.values[:, 1], np.cos(2 * np.pi * 3.0 * signal.times), atol=5e-3)


def test_reconstruct_integrates_linear_frequency_exactly():
    times = np.linspace(0.0, 1.0, 6)
    y, z = sine_lines(16, times)
    signal = reconstruct(make_trajectory(y, z, 1.0 + times, times), t_dense=np.linspace(0.0, 1.0, 37))
    np.testing.assert_allclose(signal.psi, signal.times + 0.5 * signal.times ** 2, rtol=1e-12)


def test_reconstruct_with_zero_frequency_reads_line_zero(rng):
    times = np.array([0.0, 0.5, 1.0])
    y = rng.normal(size=(3, 6, 2))
    z = rng.normal(size=(3, 6, 1))
    signal = reconstruct(make_trajectory(y, z, np.zeros(3), times), t_dense=times)
    np.testing.assert_allclose(signal.values[:, :2], y[:, 0], rtol=1e-14)
    np.testing.assert_allclose(signal.values[:, 2:], z[:, 0], rtol=1e-14)


def test_reconstruct_of_constant_lines_is_the_line_trajectory(rng):
    times = np.array([0.0, 0.5, 1.0])
    values = rng.normal(size=(3, 1, 2))
    y = np.repeat(values[:, :, :1], 5, axis=1)
    z = np.repeat(values[:, :, 1:], 5, axis=1)
    signal = reconstruct(make_trajectory(y, z, np.array([4.0, 5.0, 6.0]), times), t_dense=times)
    np.testing.assert_allclose(signal.values, values[:, 0], rtol=1e-14)


def test_reconstruct_arguments():
    y, z = sine_lines(8, [0.0])
    with pytest.raises(ValueError):
        reconstruct(make_trajectory(y, z, [1.0], [0.0]))
    y, z = sine_lines(8, [0.0, 1.0])
    with pytest.raises(ValueError):
        reconstruct(make_trajectory(y, z, [1.0, 1.0], [0.0, 1.0]), t_dense=np.array([0.5, 1.5]))


@pytest.mark.slow
def test_reconstruction_follows_direct_transient(ring3, ring3_seeds):
    """Three oscillations of the reconstructed signal against a fine direct solve."""
    m = 100
    sys = make_system(ring3, m, "phase")
    state, velocity = consistent_init(sys, ring3_seeds(m).to_guess())
    t_end = 3.0 / state.nu
    traj = integrate(sys, (state, velocity), IntegratorConfig(steps=60, t_end=t_end))
    signal = reconstruct(traj, refine=20)

    z_cache = {"z": state.z[0].copy()}

    def rhs(t, y):
        z_cache["z"] = solve_algebraic(ring3, t, y, z_cache["z"])
        return ring3.f(t, y, z_cache["z"])

    sol = solve_ivp(rhs, (0.0, t_end), state.y[0], method="LSODA", rtol=1e-10, atol=1e-12, t_eval=signal.times)
    assert sol.success
    direct = sol.y[0]
    amplitude = 0.5 * np.ptp(direct)
    rms = np.sqrt(np.mean((signal.values[:, 0] - direct) ** 2))
    assert rms < 0.05 * amplitude
