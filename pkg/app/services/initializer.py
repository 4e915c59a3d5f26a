"""
Initial values for the MOL system: the periodic seed from a frozen-input
transient and the consistent completion of a guess.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp

from app.core.config import settings
from app.core.exceptions import ConditionViolation, ConsistencyError, ModelError, PeriodicSeedError
from app.models.dae_model import SemiExplicitModel, solve_algebraic
from app.services.mol_assembly import (
    GridState,
    MolSystem,
    Optimality,
    PhaseAlgebraic,
    PhaseDifferential,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class InitGuess:
    """
    User guess for the initial grid.

    Attributes:
        y (np.ndarray): (m, n_y) differential lines.
        z (np.ndarray, optional): (m, n_z) algebraic lines; zeros when omitted.
        nu (float, optional): Local frequency; required when the frequency is
            not closed by consistent_init.
        t0 (float): Initial slow time.
    """
    y: np.ndarray
    z: Optional[np.ndarray] = None
    nu: Optional[float] = None
    t0: float = 0.0


@dataclass(frozen=True, eq=False)
class PeriodicSeed:
    """One period of the frozen-input steady oscillation resampled onto m lines."""
    y: np.ndarray
    z: np.ndarray
    nu_seed: float
    period: float
    periods: np.ndarray

    def to_guess(self, t0: float = 0.0) -> InitGuess:
        return InitGuess(y=self.y.copy(), z=self.z.copy(), nu=self.nu_seed, t0=t0)


def _check_guess(sys: MolSystem, guess: InitGuess) -> Tuple[np.ndarray, np.ndarray]:
    model = sys.model
    y = np.array(guess.y, dtype=float, copy=True)
    if y.shape != (sys.m, model.n_y):
        raise ConsistencyError(f"guess y has shape {y.shape}, expected ({sys.m}, {model.n_y})")
    if guess.z is None:
        z = np.zeros((sys.m, model.n_z))
    else:
        z = np.array(guess.z, dtype=float, copy=True)
        if z.shape != (sys.m, model.n_z):
            raise ConsistencyError(f"guess z has shape {z.shape}, expected ({sys.m}, {model.n_z})")
    return y, z


def _pin_algebraic_line(
    model: SemiExplicitModel,
    t0: float,
    y0: np.ndarray,
    z0: np.ndarray,
    component: int,
    eta0: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Solve g(t0, y, z) = 0 together with z[component] = eta0 on one line.

    Both y and z of the line are free; the minimum-norm Gauss-Newton update
    keeps the result close to the guess.
    """
    n_y, n_z = model.n_y, model.n_z
    y, z = y0.copy(), z0.copy()
    tol = settings.CONSTRAINT_NEWTON_TOL
    for _ in range(settings.CONSTRAINT_NEWTON_MAX_ITER + 1):
        res = np.concatenate([model.g(t0, y, z), [z[component] - eta0]])
        if np.max(np.abs(res)) <= tol:
            return y, z
        jac = np.zeros((n_z + 1, n_y + n_z))
        jac[:n_z, :n_y] = model.dg_dy(t0, y, z)
        jac[:n_z, n_y:] = model.dg_dz(t0, y, z)
        jac[n_z, n_y + component] = 1.0
        step, _, rank, _ = scipy.linalg.lstsq(jac, -res)
        if rank < n_z + 1:
            raise ConditionViolation(
                "pinned algebraic component cannot be reached on line 0 (rank-deficient constraint system)",
                condition=0,
            )
        y = y + step[:n_y]
        z = z + step[n_y:]
    raise ConsistencyError(f"Gauss-Newton for the pinned line did not converge (residual {np.max(np.abs(res)):.3e})")


def consistent_init(sys: MolSystem, guess: InitGuess, close_frequency: bool = True) -> Tuple[GridState, GridState]:
    """
    Complete a guess to a consistent state/velocity pair at t0.

    Args:
        sys (MolSystem): The discretised system.
        guess (InitGuess): Initial grid guess.
        close_frequency (bool): Solve the coupling for nu. When False the
            guess nu is kept and the coupling row may be violated (a nearly
            consistent start).

    Returns:
        Tuple[GridState, GridState]: (state, velocity) with residual ~ 0.

    Notable:
        The velocity of nu is set to zero; no residual row depends on it.
    """
    model = sys.model
    coupling = sys.coupling
    t0 = guess.t0
    y, z = _check_guess(sys, guess)

    if isinstance(coupling, PhaseDifferential):
        y[0, coupling.component] = coupling.eta.value(t0)

    try:
        first = 0
        if isinstance(coupling, PhaseAlgebraic):
            y[0], z[0] = _pin_algebraic_line(model, t0, y[0], z[0], coupling.component, coupling.eta.value(t0))
            first = 1
        for i in range(first, sys.m):
            z[i] = solve_algebraic(model, t0, y[i], z[i])
    except ModelError as e:
        raise ConsistencyError(f"constraint solve failed: {e}") from e

    dy = sys.operator.apply_lines(y)
    dz = sys.operator.apply_lines(z)
    state0 = GridState(y=y, z=z, nu=0.0)
    rhs = sys.line_rhs(t0, state0)

    # z' = a + nu * b on every line, from differentiating g = 0
    a = np.zeros_like(z)
    b = np.zeros_like(z)
    for i in range(sys.m):
        gy = model.dg_dy(t0, y[i], z[i])
        gz = model.dg_dz(t0, y[i], z[i])
        gt = model.dg_dt(t0, y[i], z[i])
        lu = scipy.linalg.lu_factor(gz)
        a[i] = -scipy.linalg.lu_solve(lu, gt + gy @ rhs[i])
        b[i] = scipy.linalg.lu_solve(lu, gy @ dy[i])

    if close_frequency:
        nu = _close_frequency(sys, t0, rhs, dy, dz, a, b)
    else:
        if guess.nu is None:
            raise ConsistencyError("a nearly consistent start needs a frequency in the guess")
        nu = float(guess.nu)
        logger.warning(f"Nearly consistent start: keeping seed frequency nu={nu:.6e} without closing the coupling")

    state = GridState(y=y, z=z, nu=nu)
    velocity = GridState(y=rhs - nu * dy, z=a + nu * b, nu=0.0)
    logger.info(f"Consistent initial values at t0={t0}: coupling={coupling.kind}, nu={nu:.9e}")
    return state, velocity


def _close_frequency(
    sys: MolSystem,
    t0: float,
    rhs: np.ndarray,
    dy: np.ndarray,
    dz: np.ndarray,
    a: np.ndarray,
    b: np.ndarray,
) -> float:
    coupling = sys.coupling
    tol = settings.DEGENERACY_TOL

    if isinstance(coupling, PhaseDifferential):
        ell = coupling.component
        d = dy[0, ell]
        if abs(d) <= tol * max(1.0, float(np.max(np.abs(dy)))):
            raise ConditionViolation(
                f"phase component {ell} has vanishing fast-time derivative on line 0 (D={d:.3e})",
                condition=1,
            )
        return float((rhs[0, ell] - coupling.eta.derivative(t0)) / d)

    if isinstance(coupling, PhaseAlgebraic):
        ell = coupling.component
        coef = b[0, ell]
        if abs(coef) <= tol * max(1.0, float(np.max(np.abs(b)))):
            raise ConditionViolation(
                f"frequency does not enter the derivative of algebraic component {ell} on line 0",
                condition=0,
            )
        return float((coupling.eta.derivative(t0) - a[0, ell]) / coef)

    if isinstance(coupling, Optimality):
        w_y, w_z = coupling.w_y, coupling.w_z
        # f3(nu) = alpha + beta * nu
        alpha = np.sum(w_y * rhs * dy) + np.sum(w_z * a * dz)
        beta = -np.sum(w_y * dy * dy) + np.sum(w_z * b * dz)
        scale = np.sum(w_y * dy * dy) + np.sum(np.abs(w_z * b * dz))
        if scale == 0.0 or abs(beta) <= tol * scale:
            raise ConditionViolation(
                f"frequency coefficient of the optimality condition vanishes (beta={beta:.3e}); "
                "no weighted variable varies along the fast time",
                condition=2,
            )
        return float(-alpha / beta)

    raise ConsistencyError(f"unsupported coupling {type(coupling).__name__}")


def _default_start(n_y: int) -> np.ndarray:
    return 0.1 * np.linspace(1.0, -1.0, n_y) if n_y > 1 else np.array([0.1])


def periodic_seed(
    model: SemiExplicitModel,
    b_frozen: float,
    m: int,
    component: int = 0,
    y0: Optional[np.ndarray] = None,
    algebraic: bool = False,
    level: float = 0.0,
) -> PeriodicSeed:
    """
    Approximate the stable periodic solution of the frozen-input DAE.

    Args:
        model (SemiExplicitModel): The DAE; its input is frozen to ``b_frozen``.
        b_frozen (float): Constant input value.
        m (int): Number of lines to resample one period onto.
        component (int): Component whose upward crossings of ``level``
            define the period; line 0 sits on such a crossing.
        y0 (np.ndarray, optional): Start of the transient.
        algebraic (bool): ``component`` indexes z instead of y.
        level (float): Crossing level, the phase value eta(t0) of the coupling.

    Returns:
        PeriodicSeed: Grid, frequency estimate 1/period and the period history.
    """
    frozen = model.with_constant_input(b_frozen)
    if not frozen.autonomous:
        raise PeriodicSeedError(f"{model.name} is not autonomous under a frozen input")
    n_target = frozen.n_z if algebraic else frozen.n_y
    if not 0 <= component < n_target:
        raise PeriodicSeedError(f"crossing component {component} outside 0..{n_target - 1}")

    y_start = _default_start(frozen.n_y) if y0 is None else np.asarray(y0, dtype=float)
    z_cache = {"z": solve_algebraic(frozen, 0.0, y_start, np.zeros(frozen.n_z))}

    def z_of(y: np.ndarray) -> np.ndarray:
        z_cache["z"] = solve_algebraic(frozen, 0.0, y, z_cache["z"])
        return z_cache["z"]

    def rhs(t, y):
        return frozen.f(t, y, z_of(y))

    def jac(t, y):
        return frozen.reduced_jacobian(t, y, z_of(y))

    def crossing(t, y):
        if algebraic:
            return z_of(y)[component] - level
        return y[component] - level
    crossing.direction = 1.0

    eigs = np.linalg.eigvals(frozen.reduced_jacobian(0.0, y_start, z_cache["z"]))
    rate = float(np.max(np.abs(eigs))) if eigs.size else 0.0
    chunk = 200.0 / rate if rate > 0 else 200.0

    t = 0.0
    y = y_start.copy()
    times: List[float] = []
    states: List[np.ndarray] = []
    n_avg = settings.SEED_PERIODS_AVERAGED
    for n_chunk in range(settings.SEED_MAX_CHUNKS):
        sol = solve_ivp(
            rhs, (t, t + chunk), y,
            method=settings.SEED_METHOD,
            rtol=settings.SEED_RTOL,
            atol=settings.SEED_ATOL,
            jac=jac,
            events=crossing,
        )
        if sol.status == -1:
            raise PeriodicSeedError(f"transient integration failed: {sol.message}")
        for tc, yc in zip(sol.t_events[0], sol.y_events[0]):
            if times and tc <= times[-1] + 1e-12 * chunk:
                continue
            times.append(float(tc))
            states.append(np.array(yc))
        t, y = float(sol.t[-1]), sol.y[:, -1]

        periods = np.diff(times)
        if periods.size > n_avg:
            recent = periods[-(n_avg + 1):]
            spread = np.abs(np.diff(recent)) / recent[1:]
            if np.all(spread <= settings.SEED_PERIOD_TOL):
                period = float(np.mean(periods[-n_avg:]))
                logger.info(
                    f"Periodic regime after {n_chunk + 1} chunks ({len(times)} crossings): "
                    f"period={period:.9e}, nu_seed={1.0 / period:.9e}"
                )
                return _resample(frozen, states[-1], times[-1], period, m, periods)

    raise PeriodicSeedError(
        f"no periodic regime within {settings.SEED_MAX_CHUNKS} chunks "
        f"({len(times)} crossings of component {component})"
    )


def _resample(
    model: SemiExplicitModel,
    y_cross: np.ndarray,
    t_cross: float,
    period: float,
    m: int,
    periods: np.ndarray,
) -> PeriodicSeed:
    z_cache = {"z": solve_algebraic(model, t_cross, y_cross, np.zeros(model.n_z))}

    def rhs(t, y):
        z_cache["z"] = solve_algebraic(model, t, y, z_cache["z"])
        return model.f(t, y, z_cache["z"])

    def jac(t, y):
        return model.reduced_jacobian(t, y, z_cache["z"])

    t_eval = t_cross + period * np.arange(m) / m
    sol = solve_ivp(
        rhs, (t_cross, t_cross + period), y_cross,
        method=settings.SEED_METHOD,
        rtol=settings.SEED_RTOL,
        atol=settings.SEED_ATOL,
        jac=jac,
        t_eval=t_eval,
    )
    if sol.status == -1 or sol.y.shape[1] != m:
        raise PeriodicSeedError(f"resampling integration failed: {sol.message}")

    y_grid = sol.y.T.copy()
    z_grid = np.zeros((m, model.n_z))
    z_prev = z_cache["z"]
    for i in range(m):
        z_prev = solve_algebraic(model, 0.0, y_grid[i], z_prev)
        z_grid[i] = z_prev
    return PeriodicSeed(y=y_grid, z=z_grid, nu_seed=1.0 / period, period=period, periods=np.asarray(periods))
