"""
Semi-explicit DAE models  y' = f(t, y, z),  0 = g(t, y, z).

The input signal b(t) is folded into the time argument: a model evaluates
b itself from ``t``. Models supply analytic first-order Jacobians; the index
analysis never needs anything beyond them.
"""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from app.core.config import settings
from app.core.exceptions import ConsistencyError, ModelError

logger = logging.getLogger(__name__)

ScalarFn = Callable[[float], float]


@dataclass(frozen=True)
class InputSignal:
    """
    A scalar, predetermined input signal with its exact time derivative.

    Attributes:
        b (Callable): t -> b(t).
        db_dt (Callable): t -> b'(t).
        description (str): Human readable form, written to meta files.
        constant (bool): True when b' vanishes identically.
    """
    b: ScalarFn
    db_dt: ScalarFn
    description: str
    constant: bool = False


def _check_period(period: float) -> None:
    if not period > 0:
        raise ModelError(f"input period must be positive, got {period}")


def make_input_harmonic(period: float = 1.0, amplitude: float = 0.5) -> InputSignal:
    """b(t) = 1 + amplitude * sin(2 pi t / T)."""
    _check_period(period)
    omega = 2.0 * math.pi / period
    return InputSignal(
        b=lambda t: 1.0 + amplitude * math.sin(omega * t),
        db_dt=lambda t: amplitude * omega * math.cos(omega * t),
        description=f"1 + {amplitude}*sin(2*pi*t/{period})",
    )


def make_input_sinsq(period: float = 1.0, amplitude: float = 2.0) -> InputSignal:
    """b(t) = 1 + amplitude * sin^2(2 pi t / T)."""
    _check_period(period)
    omega = 2.0 * math.pi / period
    return InputSignal(
        b=lambda t: 1.0 + amplitude * math.sin(omega * t) ** 2,
        # d/dt sin^2(wt) = w sin(2wt)
        db_dt=lambda t: amplitude * omega * math.sin(2.0 * omega * t),
        description=f"1 + {amplitude}*sin^2(2*pi*t/{period})",
    )


def make_input_constant(value: float = 1.0) -> InputSignal:
    return InputSignal(
        b=lambda t: value,
        db_dt=lambda t: 0.0,
        description=f"{value}",
        constant=True,
    )


@dataclass(frozen=True)
class LinearConstraints:
    """g(t, y, z) = G_y y + G_z z + b_g(t)."""
    G_y: np.ndarray
    G_z: np.ndarray
    b_g: Callable[[float], np.ndarray]


class SemiExplicitModel(ABC):
    """
    Abstract semi-explicit DAE of index one.

    Subclasses set ``n_y`` / ``n_z`` and implement the residual maps and their
    Jacobians. All evaluations are pure.
    """
    n_y: int
    n_z: int
    name: str = "model"

    @abstractmethod
    def f(self, t: float, y: np.ndarray, z: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def g(self, t: float, y: np.ndarray, z: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def df_dy(self, t: float, y: np.ndarray, z: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def df_dz(self, t: float, y: np.ndarray, z: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def dg_dy(self, t: float, y: np.ndarray, z: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def dg_dz(self, t: float, y: np.ndarray, z: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def df_dt(self, t: float, y: np.ndarray, z: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def dg_dt(self, t: float, y: np.ndarray, z: np.ndarray) -> np.ndarray: ...

    @property
    def linear_constraints(self) -> Optional[LinearConstraints]:
        """Constant-matrix form of g, or None when g is nonlinear."""
        return None

    @property
    def autonomous(self) -> bool:
        return False

    def with_constant_input(self, value: float) -> "SemiExplicitModel":
        """Return the model with its input frozen to ``value``."""
        raise ModelError(f"{self.name} has no input signal that can be frozen")

    def reduced_jacobian(self, t: float, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Jacobian of y -> f(t, y, z(y)) with z(y) defined by g = 0."""
        gz = self.dg_dz(t, y, z)
        try:
            dz_dy = -np.linalg.solve(gz, self.dg_dy(t, y, z))
        except np.linalg.LinAlgError as e:
            raise ModelError(f"dg_dz is singular at t={t}") from e
        return self.df_dy(t, y, z) + self.df_dz(t, y, z) @ dz_dy


def solve_algebraic(
    model: SemiExplicitModel,
    t: float,
    y: np.ndarray,
    z0: np.ndarray,
    tol: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> np.ndarray:
    """
    Solve g(t, y, z) = 0 for z by Newton's method with y fixed.

    Args:
        model (SemiExplicitModel): The DAE.
        t (float): Time.
        y (np.ndarray): Differential variables, held fixed.
        z0 (np.ndarray): Starting guess for z.
        tol (float, optional): Absolute tolerance on ||g||_inf.
        max_iter (int, optional): Newton iteration limit.

    Returns:
        np.ndarray: z with ||g(t, y, z)||_inf <= tol.

    Notable:
        A converged starting guess is returned unchanged (no iteration is
        performed), which makes repeated initialisation idempotent.
    """
    tol = settings.CONSTRAINT_NEWTON_TOL if tol is None else tol
    max_iter = settings.CONSTRAINT_NEWTON_MAX_ITER if max_iter is None else max_iter
    z = np.array(z0, dtype=float, copy=True)
    for _ in range(max_iter + 1):
        res = model.g(t, y, z)
        if np.max(np.abs(res), initial=0.0) <= tol:
            return z
        gz = model.dg_dz(t, y, z)
        try:
            z = z - np.linalg.solve(gz, res)
        except np.linalg.LinAlgError as e:
            raise ModelError(f"dg_dz is singular at t={t}, y={y}") from e
    raise ConsistencyError(
        f"Newton on g did not converge within {max_iter} iterations "
        f"(||g|| = {np.max(np.abs(model.g(t, y, z))):.3e})"
    )


class RingOscillatorParams(BaseModel):
    """
    Parameters of the k-stage ring oscillator.

    Attributes:
        k (int): Odd number of inverter stages.
        C (float): Capacitance in Farad.
        R (float): Resistance in Ohm.
        G (float): Inverter gain.
        input (InputSignal): Signal modulating the first capacitance.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    k: int = 3
    C: float = 1e-6
    R: float = 1e3
    G: float = -5.0
    input: InputSignal = make_input_constant(1.0)

    @field_validator("k")
    @classmethod
    def k_must_be_odd(cls, v: int) -> int:
        if v < 1 or v % 2 == 0:
            raise ValueError(f"stage count k must be an odd positive integer, got {v}")
        return v

    @field_validator("C", "R")
    @classmethod
    def must_be_positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("C and R must be positive")
        return v


class RingOscillator(SemiExplicitModel):
    """
    k-stage ring oscillator; y = node voltages u, z = branch currents i.

        u_1' = i_1 / (C b(t)),   u_j' = i_j / C            (j >= 2)
        0    = R i_j - (tanh(G u_pred(j)) - u_j),  pred(1) = k, pred(j) = j - 1
    """

    def __init__(self, params: RingOscillatorParams) -> None:
        self.params = params
        self.n_y = params.k
        self.n_z = params.k
        self.name = f"ring_oscillator_k{params.k}"
        self._idx = np.arange(params.k)
        self._pred = np.roll(self._idx, 1)

    @property
    def autonomous(self) -> bool:
        return self.params.input.constant

    def with_constant_input(self, value: float) -> "RingOscillator":
        return RingOscillator(self.params.model_copy(update={"input": make_input_constant(value)}))

    def _capacitance(self, t: float) -> np.ndarray:
        cap = np.full(self.n_y, self.params.C)
        cap[0] *= self.params.input.b(t)
        return cap

    def f(self, t, y, z):
        return np.asarray(z, dtype=float) / self._capacitance(t)

    def g(self, t, y, z):
        p = self.params
        return p.R * z - (np.tanh(p.G * y[self._pred]) - y)

    def df_dy(self, t, y, z):
        return np.zeros((self.n_y, self.n_y))

    def df_dz(self, t, y, z):
        return np.diag(1.0 / self._capacitance(t))

    def dg_dy(self, t, y, z):
        p = self.params
        th = np.tanh(p.G * y[self._pred])
        jac = np.eye(self.n_z)
        # sech^2 = 1 - tanh^2
        jac[self._idx, self._pred] -= p.G * (1.0 - th * th)
        return jac

    def dg_dz(self, t, y, z):
        return self.params.R * np.eye(self.n_z)

    def df_dt(self, t, y, z):
        p = self.params
        out = np.zeros(self.n_y)
        b = p.input.b(t)
        out[0] = -z[0] * p.input.db_dt(t) / (p.C * b * b)
        return out

    def dg_dt(self, t, y, z):
        return np.zeros(self.n_z)


def make_ring_oscillator(params: RingOscillatorParams) -> RingOscillator:
    model = RingOscillator(params)
    logger.debug(f"Built {model.name} (C={params.C}, R={params.R}, G={params.G}, b={params.input.description})")
    return model


class LinearTestModel(SemiExplicitModel):
    """
    f = A y + B z + c(t),  g = G_y y + G_z z + b_g(t).

    Time-dependent parts are optional; omitted ones are zero.
    """

    def __init__(
        self,
        A: np.ndarray,
        B: np.ndarray,
        G_y: np.ndarray,
        G_z: np.ndarray,
        c: Optional[Callable[[float], np.ndarray]] = None,
        c_dot: Optional[Callable[[float], np.ndarray]] = None,
        b_g: Optional[Callable[[float], np.ndarray]] = None,
        b_g_dot: Optional[Callable[[float], np.ndarray]] = None,
        name: str = "linear_test",
    ) -> None:
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.G_y = np.atleast_2d(np.asarray(G_y, dtype=float))
        self.G_z = np.atleast_2d(np.asarray(G_z, dtype=float))
        self.n_y = self.A.shape[0]
        self.n_z = self.G_z.shape[0]
        if self.A.shape != (self.n_y, self.n_y) or self.B.shape != (self.n_y, self.n_z):
            raise ModelError("A must be n_y x n_y and B n_y x n_z")
        if self.G_y.shape != (self.n_z, self.n_y) or self.G_z.shape != (self.n_z, self.n_z):
            raise ModelError("G_y must be n_z x n_y and G_z n_z x n_z")
        if np.linalg.matrix_rank(self.G_z) < self.n_z:
            raise ModelError("G_z must be non-singular for an index-1 model")
        zeros_y = np.zeros(self.n_y)
        zeros_z = np.zeros(self.n_z)
        self._c = c or (lambda t: zeros_y)
        self._c_dot = c_dot or (lambda t: zeros_y)
        self._b_g = b_g or (lambda t: zeros_z)
        self._b_g_dot = b_g_dot or (lambda t: zeros_z)
        self._time_dependent = c is not None or b_g is not None
        self.name = name

    @property
    def autonomous(self) -> bool:
        return not self._time_dependent

    @property
    def linear_constraints(self) -> LinearConstraints:
        return LinearConstraints(G_y=self.G_y, G_z=self.G_z, b_g=self._b_g)

    def with_constant_input(self, value: float) -> "LinearTestModel":
        if self.autonomous:
            return self
        c0 = np.asarray(self._c(0.0), dtype=float)
        b0 = np.asarray(self._b_g(0.0), dtype=float)
        return LinearTestModel(self.A, self.B, self.G_y, self.G_z,
                               c=lambda t: c0, b_g=lambda t: b0, name=self.name)

    def f(self, t, y, z):
        return self.A @ y + self.B @ z + self._c(t)

    def g(self, t, y, z):
        return self.G_y @ y + self.G_z @ z + self._b_g(t)

    def df_dy(self, t, y, z):
        return self.A.copy()

    def df_dz(self, t, y, z):
        return self.B.copy()

    def dg_dy(self, t, y, z):
        return self.G_y.copy()

    def dg_dz(self, t, y, z):
        return self.G_z.copy()

    def df_dt(self, t, y, z):
        return np.asarray(self._c_dot(t), dtype=float)

    def dg_dt(self, t, y, z):
        return np.asarray(self._b_g_dot(t), dtype=float)


def make_linear_test_model(frequency: float = 1.0, damping: float = 0.0) -> LinearTestModel:
    """
    Harmonic oscillator with one algebraic output.

        y' = [[-d, w], [-w, -d]] y,   0 = y_1 + 0.5 y_2 + 2 z

    Args:
        frequency (float): Oscillation frequency in Hz (w = 2 pi frequency).
        damping (float): Non-negative damping rate d.
    """
    omega = 2.0 * math.pi * frequency
    A = np.array([[-damping, omega], [-omega, -damping]])
    B = np.zeros((2, 1))
    G_y = np.array([[1.0, 0.5]])
    G_z = np.array([[2.0]])
    return LinearTestModel(A, B, G_y, G_z, name="linear_test")


def check_jacobians(model: SemiExplicitModel, t: float, y: np.ndarray, z: np.ndarray, h_fd: float = 1e-6) -> float:
    """
    Compare analytic Jacobians against central finite differences.

    Args:
        model (SemiExplicitModel): Model under test.
        t (float): Evaluation time.
        y (np.ndarray): Differential variables.
        z (np.ndarray): Algebraic variables.
        h_fd (float): Finite-difference step (> 0).

    Returns:
        float: Worst relative deviation over all eight blocks, each block
        normalised by max(1, largest analytic entry).
    """
    if not h_fd > 0:
        raise ValueError("h_fd must be positive")
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)

    def central(fun, wrt: str) -> np.ndarray:
        if wrt == "t":
            return (fun(t + h_fd, y, z) - fun(t - h_fd, y, z)) / (2.0 * h_fd)
        base = y if wrt == "y" else z
        cols = []
        for j in range(base.size):
            e = np.zeros_like(base)
            e[j] = h_fd
            if wrt == "y":
                cols.append((fun(t, y + e, z) - fun(t, y - e, z)) / (2.0 * h_fd))
            else:
                cols.append((fun(t, y, z + e) - fun(t, y, z - e)) / (2.0 * h_fd))
        return np.column_stack(cols)

    pairs = [
        (central(model.f, "y"), model.df_dy(t, y, z)),
        (central(model.f, "z"), model.df_dz(t, y, z)),
        (central(model.g, "y"), model.dg_dy(t, y, z)),
        (central(model.g, "z"), model.dg_dz(t, y, z)),
        (central(model.f, "t"), model.df_dt(t, y, z)),
        (central(model.g, "t"), model.dg_dt(t, y, z)),
    ]
    worst = 0.0
    for fd, analytic in pairs:
        scale = max(1.0, float(np.max(np.abs(analytic), initial=0.0)))
        worst = max(worst, float(np.max(np.abs(fd - analytic), initial=0.0)) / scale)
    return worst
