"""
Method-of-lines assembly of the warped multirate system.

The unknown is x = (x1, x2, x3) with x1 the stacked differential lines,
x2 the stacked algebraic lines and x3 = nu the local frequency. The residual is

    F1 = x1' - (f(t, y_i, z_i) - nu * D_i(y))      (m * n_y rows)
    F2 = g(t, y_i, z_i)                           (m * n_z rows)
    F3 = f3                                       (1 row, the coupling)

Stacking is line-major, component-minor everywhere: entry (i, l) of the
(m, n) line array sits at position i*n + l of the flat vector.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, ClassVar, Optional, Union

import numpy as np
import scipy.linalg

from app.core.exceptions import CouplingError
from app.models.dae_model import SemiExplicitModel
from app.services.stencils import CirculantOperator, DifferenceStencil, build_matrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GridState:
    """
    One point of the MOL system (a state or a velocity).

    Attributes:
        y (np.ndarray): (m, n_y) differential lines.
        z (np.ndarray): (m, n_z) algebraic lines.
        nu (float): Local frequency (or its derivative for a velocity).
    """
    y: np.ndarray
    z: np.ndarray
    nu: float

    @property
    def m(self) -> int:
        return self.y.shape[0]

    @property
    def x1(self) -> np.ndarray:
        return self.y.ravel()

    @property
    def x2(self) -> np.ndarray:
        return self.z.ravel()

    @property
    def n_bar(self) -> int:
        return self.y.size + self.z.size + 1

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.y.ravel(), self.z.ravel(), [self.nu]])

    @classmethod
    def from_vector(cls, vec: np.ndarray, m: int, n_y: int, n_z: int) -> "GridState":
        vec = np.asarray(vec, dtype=float)
        n1, n2 = m * n_y, m * n_z
        if vec.shape != (n1 + n2 + 1,):
            raise ValueError(f"expected vector of length {n1 + n2 + 1}, got {vec.shape}")
        return cls(
            y=vec[:n1].reshape(m, n_y).copy(),
            z=vec[n1:n1 + n2].reshape(m, n_z).copy(),
            nu=float(vec[-1]),
        )

    @classmethod
    def zeros(cls, m: int, n_y: int, n_z: int) -> "GridState":
        return cls(y=np.zeros((m, n_y)), z=np.zeros((m, n_z)), nu=0.0)


@dataclass(frozen=True)
class EtaFunction:
    """Prescribed slowly varying phase value eta(t) with two exact derivatives."""
    value: Callable[[float], float]
    derivative: Callable[[float], float]
    second_derivative: Callable[[float], float]
    description: str


def constant_eta(eta0: float = 0.0) -> EtaFunction:
    return EtaFunction(
        value=lambda t: eta0,
        derivative=lambda t: 0.0,
        second_derivative=lambda t: 0.0,
        description=f"{eta0}",
    )


@dataclass(frozen=True)
class PhaseDifferential:
    """Pins differential component ``component`` of line 0 to eta(t)."""
    component: int
    eta: EtaFunction = field(default_factory=constant_eta)
    kind: ClassVar[str] = "phase_differential"


@dataclass(frozen=True)
class PhaseAlgebraic:
    """Pins algebraic component ``component`` of line 0 to eta(t)."""
    component: int
    eta: EtaFunction = field(default_factory=constant_eta)
    kind: ClassVar[str] = "phase_algebraic"


@dataclass(frozen=True, eq=False)
class Optimality:
    """
    Discrete necessary condition of the minimum-oscillation functional.

    Attributes:
        w_y (np.ndarray): Non-negative weights of the differential components.
        w_z (np.ndarray): Non-negative weights of the algebraic components.
    """
    w_y: np.ndarray
    w_z: np.ndarray
    kind: ClassVar[str] = "optimality"

    def __post_init__(self) -> None:
        w_y = np.asarray(self.w_y, dtype=float).ravel()
        w_z = np.asarray(self.w_z, dtype=float).ravel()
        if np.any(w_y < 0) or np.any(w_z < 0):
            raise CouplingError("optimality weights must be non-negative")
        if not (np.any(w_y > 0) or np.any(w_z > 0)):
            raise CouplingError("at least one optimality weight must be positive")
        object.__setattr__(self, "w_y", w_y)
        object.__setattr__(self, "w_z", w_z)


CouplingCondition = Union[PhaseDifferential, PhaseAlgebraic, Optimality]


class MolSystem:
    """
    A semi-explicit model discretised on m periodic lines and closed by a
    coupling condition. Immutable after construction.
    """

    def __init__(self, model: SemiExplicitModel, stencil: DifferenceStencil, m: int, coupling: CouplingCondition) -> None:
        self.model = model
        self.stencil = stencil
        self.m = m
        self.coupling = coupling
        self.operator: CirculantOperator = build_matrix(stencil, m)
        self._validate_coupling()
        logger.debug(
            f"MOL system: model={model.name}, m={m}, stencil={stencil.name}, "
            f"coupling={coupling.kind}, n_bar={self.n_bar}"
        )

    def _validate_coupling(self) -> None:
        c = self.coupling
        if isinstance(c, PhaseDifferential):
            if not 0 <= c.component < self.model.n_y:
                raise CouplingError(f"phase component {c.component} outside 0..{self.model.n_y - 1}")
        elif isinstance(c, PhaseAlgebraic):
            if not 0 <= c.component < self.model.n_z:
                raise CouplingError(f"phase component {c.component} outside 0..{self.model.n_z - 1}")
        elif isinstance(c, Optimality):
            if c.w_y.size != self.model.n_y or c.w_z.size != self.model.n_z:
                raise CouplingError(
                    f"weights need {self.model.n_y} + {self.model.n_z} entries, "
                    f"got {c.w_y.size} + {c.w_z.size}"
                )
        else:
            raise CouplingError(f"unsupported coupling {type(c).__name__}")

    @property
    def n1(self) -> int:
        return self.m * self.model.n_y

    @property
    def n2(self) -> int:
        return self.m * self.model.n_z

    @property
    def n_bar(self) -> int:
        return self.n1 + self.n2 + 1

    @property
    def h(self) -> float:
        return self.operator.h

    def state_from_vector(self, vec: np.ndarray) -> GridState:
        return GridState.from_vector(vec, self.m, self.model.n_y, self.model.n_z)

    def check_shapes(self, state: GridState) -> None:
        if state.y.shape != (self.m, self.model.n_y) or state.z.shape != (self.m, self.model.n_z):
            raise ValueError(
                f"grid shapes {state.y.shape}/{state.z.shape} do not match "
                f"({self.m}, {self.model.n_y})/({self.m}, {self.model.n_z})"
            )

    def weight_matrices(self):
        """W1 = I_m (x) diag(w_y), W2 = I_m (x) diag(w_z) as diagonals."""
        c = self.coupling
        if not isinstance(c, Optimality):
            raise CouplingError("weight matrices exist only for the optimality coupling")
        return np.tile(c.w_y, self.m), np.tile(c.w_z, self.m)

    def line_rhs(self, t: float, state: GridState) -> np.ndarray:
        """f(t, y_i, z_i) for every line, shape (m, n_y)."""
        f = self.model.f
        return np.stack([f(t, state.y[i], state.z[i]) for i in range(self.m)])

    def line_constraints(self, t: float, state: GridState) -> np.ndarray:
        g = self.model.g
        return np.stack([g(t, state.y[i], state.z[i]) for i in range(self.m)])


def optimality_sum(sys: MolSystem, state: GridState, xdot: GridState) -> float:
    """sum_i sum_l w_l * xdot_{i,l} * D_{i,l}(x) over both variable groups."""
    c = sys.coupling
    dy = sys.operator.apply_lines(state.y)
    dz = sys.operator.apply_lines(state.z)
    terms = np.concatenate([(c.w_y * xdot.y * dy).ravel(), (c.w_z * xdot.z * dz).ravel()])
    return math.fsum(terms)


def residual(sys: MolSystem, t: float, state: GridState, xdot: GridState) -> np.ndarray:
    """
    Residual F(t, x, x') of the MOL system.

    Args:
        sys (MolSystem): The discretised system.
        t (float): Slow time.
        state (GridState): x.
        xdot (GridState): x'.

    Returns:
        np.ndarray: Vector of length n_bar.
    """
    sys.check_shapes(state)
    sys.check_shapes(xdot)
    dy = sys.operator.apply_lines(state.y)
    f1 = xdot.y - (sys.line_rhs(t, state) - state.nu * dy)
    f2 = sys.line_constraints(t, state)

    c = sys.coupling
    if isinstance(c, PhaseDifferential):
        f3 = state.y[0, c.component] - c.eta.value(t)
    elif isinstance(c, PhaseAlgebraic):
        f3 = state.z[0, c.component] - c.eta.value(t)
    else:
        f3 = optimality_sum(sys, state, xdot)
    return np.concatenate([f1.ravel(), f2.ravel(), [f3]])


@dataclass(frozen=True, eq=False)
class JacobianBlocks:
    """
    First-order blocks of the structured system x1' = f1(x), 0 = f2(x1, x2),
    0 = f3 at one (t, x, x') point.

    The f1 blocks are derivatives of the right-hand side f - nu*D(y), so the
    residual rows carry them with a minus sign. ``F31``/``F32`` are the
    velocity coefficients of the coupling (selector rows for the phase
    variants). ``df3hat_dxdot1``/``df3hat_dxdot2`` and ``df1hat_dx3`` belong to
    the once-differentiated system and complete the reduced derivative array.
    """
    kind: str
    df1_dx1: np.ndarray
    df1_dx2: np.ndarray
    F13: np.ndarray
    df2_dx1: np.ndarray
    df2_dx2: np.ndarray
    F31: np.ndarray
    F32: np.ndarray
    df3_dx1: np.ndarray
    df3_dx2: np.ndarray
    df3hat_dxdot1: np.ndarray
    df3hat_dxdot2: np.ndarray
    df1hat_dx3: np.ndarray

    @property
    def n1(self) -> int:
        return self.df1_dx1.shape[0]

    @property
    def n2(self) -> int:
        return self.df2_dx2.shape[0]

    @property
    def n_bar(self) -> int:
        return self.n1 + self.n2 + 1

    @property
    def velocity_coupled(self) -> bool:
        return self.kind == Optimality.kind

    def state_jacobian(self) -> np.ndarray:
        """dF/dx as an (n_bar, n_bar) matrix."""
        n1, n2 = self.n1, self.n2
        J = np.zeros((self.n_bar, self.n_bar))
        J[:n1, :n1] = -self.df1_dx1
        J[:n1, n1:n1 + n2] = -self.df1_dx2
        J[:n1, -1] = -self.F13
        J[n1:n1 + n2, :n1] = self.df2_dx1
        J[n1:n1 + n2, n1:n1 + n2] = self.df2_dx2
        J[-1, :n1] = self.df3_dx1
        J[-1, n1:n1 + n2] = self.df3_dx2
        return J

    def velocity_jacobian(self) -> np.ndarray:
        """dF/dx' as an (n_bar, n_bar) matrix (the mass matrix)."""
        n1, n2 = self.n1, self.n2
        M = np.zeros((self.n_bar, self.n_bar))
        M[:n1, :n1] = np.eye(n1)
        if self.velocity_coupled:
            M[-1, :n1] = self.F31
            M[-1, n1:n1 + n2] = self.F32
        return M


def _selector(size: int, position: int) -> np.ndarray:
    row = np.zeros(size)
    row[position] = 1.0
    return row


def jacobian_blocks(sys: MolSystem, t: float, state: GridState, xdot: GridState) -> JacobianBlocks:
    sys.check_shapes(state)
    sys.check_shapes(xdot)
    model = sys.model
    n_y, n_z, m = model.n_y, model.n_z, sys.m
    S1 = sys.operator.lift(n_y)
    S2 = sys.operator.lift(n_z)

    fy, fz, gy, gz = [], [], [], []
    for i in range(m):
        y_i, z_i = state.y[i], state.z[i]
        fy.append(model.df_dy(t, y_i, z_i))
        fz.append(model.df_dz(t, y_i, z_i))
        gy.append(model.dg_dy(t, y_i, z_i))
        gz.append(model.dg_dz(t, y_i, z_i))

    x1, x2 = state.x1, state.x2
    x1dot, x2dot = xdot.x1, xdot.x2
    n1, n2 = x1.size, x2.size

    df1_dx1 = scipy.linalg.block_diag(*fy) - state.nu * S1
    df1_dx2 = scipy.linalg.block_diag(*fz)
    F13 = -(S1 @ x1)
    df2_dx1 = scipy.linalg.block_diag(*gy)
    df2_dx2 = scipy.linalg.block_diag(*gz)

    c = sys.coupling
    if isinstance(c, Optimality):
        w1, w2 = sys.weight_matrices()
        F31 = w1 * (S1 @ x1)
        F32 = w2 * (S2 @ x2)
        # gradient of x1'^T W1 S1 x1 with respect to x1
        df3_dx1 = S1.T @ (w1 * x1dot)
        df3_dx2 = S2.T @ (w2 * x2dot)
        df3hat_dxdot1 = df3_dx1 + w1 * (S1 @ x1dot)
        df3hat_dxdot2 = df3_dx2 + w2 * (S2 @ x2dot)
    elif isinstance(c, PhaseDifferential):
        F31 = _selector(n1, c.component)
        F32 = np.zeros(n2)
        df3_dx1, df3_dx2 = F31.copy(), F32.copy()
        df3hat_dxdot1, df3hat_dxdot2 = F31.copy(), F32.copy()
    else:
        F31 = np.zeros(n1)
        F32 = _selector(n2, c.component)
        df3_dx1, df3_dx2 = F31.copy(), F32.copy()
        df3hat_dxdot1, df3hat_dxdot2 = F31.copy(), F32.copy()

    return JacobianBlocks(
        kind=c.kind,
        df1_dx1=df1_dx1,
        df1_dx2=df1_dx2,
        F13=F13,
        df2_dx1=df2_dx1,
        df2_dx2=df2_dx2,
        F31=F31,
        F32=F32,
        df3_dx1=df3_dx1,
        df3_dx2=df3_dx2,
        df3hat_dxdot1=df3hat_dxdot1,
        df3hat_dxdot2=df3hat_dxdot2,
        df1hat_dx3=-(S1 @ x1dot),
    )


def mass_matrix(sys: MolSystem, state: GridState) -> np.ndarray:
    """
    Mass matrix M(x) of the quasi-linear form M(x) x' = ...

    Identity on the differential rows, zero algebraic rows, the optimality
    row (F31, F32, 0) and a zero last column.
    """
    sys.check_shapes(state)
    n1, n2 = sys.n1, sys.n2
    M = np.zeros((sys.n_bar, sys.n_bar))
    M[:n1, :n1] = np.eye(n1)
    if isinstance(sys.coupling, Optimality):
        w1, w2 = sys.weight_matrices()
        M[-1, :n1] = w1 * sys.operator.apply_lines(state.y).ravel()
        M[-1, n1:n1 + n2] = w2 * sys.operator.apply_lines(state.z).ravel()
    return M


def residual_scales(sys: MolSystem, t: float, state: GridState, xdot: GridState) -> np.ndarray:
    """
    Positive per-row magnitudes used to judge residual convergence.

    Differential rows use 1 + |x1'| + |f| + |nu*D(y)|, algebraic rows 1,
    the coupling row 1 + sum of its term magnitudes (optimality) or 1 + |eta|.
    """
    dy = sys.operator.apply_lines(state.y)
    rhs = sys.line_rhs(t, state)
    s1 = 1.0 + np.abs(xdot.y) + np.abs(rhs) + np.abs(state.nu * dy)
    s2 = np.ones(sys.n2)
    c = sys.coupling
    if isinstance(c, Optimality):
        dz = sys.operator.apply_lines(state.z)
        s3 = 1.0 + math.fsum(np.concatenate([
            np.abs(c.w_y * xdot.y * dy).ravel(),
            np.abs(c.w_z * xdot.z * dz).ravel(),
        ]))
    else:
        s3 = 1.0 + abs(c.eta.value(t))
    return np.concatenate([s1.ravel(), s2, [s3]])


def hidden_constraint_drift(sys: MolSystem, t: float, xdot: GridState) -> float:
    """
    Violation of the differentiated phase condition, |x'_{0,l} - eta'(t)|.

    The optimality coupling has no hidden constraint of this form; 0.0 is
    returned for it.
    """
    c = sys.coupling
    if isinstance(c, PhaseDifferential):
        return abs(float(xdot.y[0, c.component]) - c.eta.derivative(t))
    if isinstance(c, PhaseAlgebraic):
        return abs(float(xdot.z[0, c.component]) - c.eta.derivative(t))
    return 0.0


def scaled_residual_norm(sys: MolSystem, t: float, state: GridState, xdot: GridState, res: Optional[np.ndarray] = None) -> float:
    """max_i |F_i| / s_i."""
    if res is None:
        res = residual(sys, t, state, xdot)
    return float(np.max(np.abs(res) / residual_scales(sys, t, state, xdot)))
