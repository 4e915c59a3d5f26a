"""
Derived quantities of a stored trajectory: the pointwise oscillation
functional, reconstruction of the single-time signal and frequency
comparisons between runs.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from app.core.exceptions import GridMismatchError
from app.services.integrator import Trajectory
from app.services.stencils import build_matrix, stencil_by_name

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FunctionalSeries:
    times: np.ndarray
    values: np.ndarray
    w_y: np.ndarray
    w_z: np.ndarray


@dataclass(frozen=True, eq=False)
class ReconstructedSignal:
    """
    Attributes:
        times (np.ndarray): Dense slow-time grid.
        values (np.ndarray): (len(times), n_y + n_z) reconstructed x(t).
        psi (np.ndarray): Accumulated phase Psi(t) = int_0^t nu.
    """
    times: np.ndarray
    values: np.ndarray
    psi: np.ndarray


@dataclass(frozen=True, eq=False)
class FrequencyDiff:
    times: np.ndarray
    abs_diff: np.ndarray
    rel_diff: np.ndarray
    max_abs: float
    mean_abs: float
    max_rel: float
    mean_rel: float


def functional_pointwise(trajectory: Trajectory, w_y, w_z) -> FunctionalSeries:
    """
    J(t_n) = h * sum_i [ sum_l w_y,l D_i,l(y)^2 + sum_l w_z,l D_i,l(z)^2 ].

    Args:
        trajectory (Trajectory): Stored run.
        w_y: Non-negative weights of the differential components.
        w_z: Non-negative weights of the algebraic components.

    Returns:
        FunctionalSeries: One value per stored time.
    """
    if trajectory.times.size == 0:
        raise ValueError("trajectory is empty")
    w_y = np.asarray(w_y, dtype=float).ravel()
    w_z = np.asarray(w_z, dtype=float).ravel()
    if w_y.size != trajectory.n_y or w_z.size != trajectory.n_z:
        raise ValueError("weight vectors do not match the trajectory components")
    op = build_matrix(stencil_by_name(trajectory.stencil), trajectory.m)
    ys, zs = trajectory.y_lines(), trajectory.z_lines()
    values = np.empty(trajectory.times.size)
    for n in range(trajectory.times.size):
        dy = op.apply_lines(ys[n])
        dz = op.apply_lines(zs[n])
        values[n] = op.h * (np.sum(w_y * dy * dy) + np.sum(w_z * dz * dz))
    return FunctionalSeries(times=trajectory.times.copy(), values=values, w_y=w_y, w_z=w_z)


def _dense_psi(times: np.ndarray, nu: np.ndarray, psi_nodes: np.ndarray, t_dense: np.ndarray, seg: np.ndarray) -> np.ndarray:
    # exact integral of the piecewise-linear nu
    dt = times[seg + 1] - times[seg]
    tau = t_dense - times[seg]
    return psi_nodes[seg] + nu[seg] * tau + (nu[seg + 1] - nu[seg]) * tau * tau / (2.0 * dt)


def reconstruct(trajectory: Trajectory, t_dense: Optional[np.ndarray] = None, refine: int = 20) -> ReconstructedSignal:
    """
    Recover x(t) = xhat(t, Psi(t) mod 1) from the multirate grid.

    Args:
        trajectory (Trajectory): Stored run (at least two times).
        t_dense (np.ndarray, optional): Evaluation times inside the stored
            range; defaults to ``refine`` points per step.
        refine (int): Sub-samples per stored step for the default grid.

    Returns:
        ReconstructedSignal: Dense samples and the phase Psi.

    Notable:
        Interpolation is linear in t between stored steps and periodic-linear
        across the lines in t2.
    """
    times = trajectory.times
    if times.size < 2:
        raise ValueError("reconstruction needs at least two stored times")
    if t_dense is None:
        t_dense = np.linspace(times[0], times[-1], refine * (times.size - 1) + 1)
    t_dense = np.asarray(t_dense, dtype=float)
    if t_dense.min() < times[0] or t_dense.max() > times[-1]:
        raise ValueError("dense times must lie inside the stored time range")

    psi_nodes = np.concatenate([[0.0], cumulative_trapezoid(trajectory.nu, times)])
    seg = np.clip(np.searchsorted(times, t_dense, side="right") - 1, 0, times.size - 2)
    psi = _dense_psi(times, trajectory.nu, psi_nodes, t_dense, seg)

    m = trajectory.m
    theta = np.mod(psi, 1.0)
    theta[theta >= 1.0] = 0.0
    pos = theta * m
    i0 = np.floor(pos).astype(int) % m
    frac = pos - np.floor(pos)
    i1 = (i0 + 1) % m

    lines = np.concatenate([trajectory.y_lines(), trajectory.z_lines()], axis=2)
    s = ((t_dense - times[seg]) / (times[seg + 1] - times[seg]))[:, None]
    frac = frac[:, None]
    at_n = (1.0 - frac) * lines[seg, i0] + frac * lines[seg, i1]
    at_n1 = (1.0 - frac) * lines[seg + 1, i0] + frac * lines[seg + 1, i1]
    values = (1.0 - s) * at_n + s * at_n1
    logger.debug(f"Reconstructed {t_dense.size} samples, Psi(t_end)={psi[-1]:.6e}")
    return ReconstructedSignal(times=t_dense, values=values, psi=psi)


def frequency_diff(traj_a: Trajectory, traj_b: Trajectory) -> FrequencyDiff:
    """Absolute and relative differences of two frequency histories on one time grid."""
    if traj_a.times.shape != traj_b.times.shape or not np.allclose(traj_a.times, traj_b.times, rtol=1e-12, atol=0.0):
        raise GridMismatchError(
            f"time grids differ ({traj_a.times.size} vs {traj_b.times.size} points)"
        )
    abs_diff = np.abs(traj_a.nu - traj_b.nu)
    denom = np.maximum(np.abs(traj_a.nu), np.abs(traj_b.nu))
    rel_diff = np.divide(abs_diff, denom, out=np.zeros_like(abs_diff), where=denom > 0)
    return FrequencyDiff(
        times=traj_a.times.copy(),
        abs_diff=abs_diff,
        rel_diff=rel_diff,
        max_abs=float(abs_diff.max()),
        mean_abs=float(abs_diff.mean()),
        max_rel=float(rel_diff.max()),
        mean_rel=float(rel_diff.mean()),
    )
