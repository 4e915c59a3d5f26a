from typing import Annotated, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.core.config import settings
from app.services.integrator import IntegratorConfig


class RingOscillatorSpec(BaseModel):
    """
    Ring-oscillator model selection.

    Attributes:
        k (int): Odd stage count.
        C (float): Capacitance in Farad.
        R (float): Resistance in Ohm.
        G (float): Inverter gain.
    """
    model_config = ConfigDict(extra="forbid")

    kind: Literal["ring_oscillator"] = "ring_oscillator"
    k: int = 3
    C: float = Field(default=1e-6, gt=0)
    R: float = Field(default=1e3, gt=0)
    G: float = -5.0

    @field_validator("k")
    @classmethod
    def k_must_be_odd(cls, v: int) -> int:
        if v < 1 or v % 2 == 0:
            raise ValueError(f"stage count k must be an odd positive integer, got {v}")
        return v

    @property
    def n_y(self) -> int:
        return self.k

    @property
    def n_z(self) -> int:
        return self.k


class LinearTestSpec(BaseModel):
    """Builtin linear oscillator with one algebraic output (n_y = 2, n_z = 1)."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["linear_test"] = "linear_test"
    frequency: float = Field(default=1.0, gt=0)
    damping: float = Field(default=0.0, ge=0)

    @property
    def n_y(self) -> int:
        return 2

    @property
    def n_z(self) -> int:
        return 1


ModelSpec = Annotated[Union[RingOscillatorSpec, LinearTestSpec], Field(discriminator="kind")]


class InputSpec(BaseModel):
    """
    Input signal b(t).

    Attributes:
        kind (str): harmonic (1 + a sin), sinsq (1 + a sin^2) or constant.
        period (float): Period T of the modulation.
        amplitude (float, optional): a; defaults to 0.5 (harmonic) or 2 (sinsq).
        value (float): Level of the constant signal.
    """
    model_config = ConfigDict(extra="forbid")

    kind: Literal["harmonic", "sinsq", "constant"] = "harmonic"
    period: float = Field(default=1.0, gt=0)
    amplitude: Optional[float] = None
    value: float = 1.0


class PhaseSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["phase"] = "phase"
    variable: Literal["differential", "algebraic"] = "differential"
    index: int = Field(default=0, ge=0)
    eta0: float = 0.0


WEIGHT_CASES = ("a", "b", "c")


class OptimalitySpec(BaseModel):
    """
    Optimality coupling weights: a named case or explicit vectors.

    Cases: a (W_y = I, W_z = I), b (W_y = I, W_z = 0), c (W_y = 0, W_z = I).
    """
    model_config = ConfigDict(extra="forbid")

    kind: Literal["optimality"] = "optimality"
    case: Optional[Literal["a", "b", "c"]] = None
    w_y: Optional[List[float]] = None
    w_z: Optional[List[float]] = None

    @model_validator(mode="after")
    def case_or_vectors(self) -> "OptimalitySpec":
        explicit = self.w_y is not None or self.w_z is not None
        if explicit and self.case is not None:
            raise ValueError("give either a weight case or explicit weight vectors, not both")
        if explicit and (self.w_y is None or self.w_z is None):
            raise ValueError("explicit weights need both w_y and w_z")
        if not explicit and self.case is None:
            self.case = "b"
        if explicit and (any(w < 0 for w in self.w_y + self.w_z) or not any(w > 0 for w in self.w_y + self.w_z)):
            raise ValueError("weights must be non-negative with at least one positive entry")
        return self


CouplingSpec = Annotated[Union[PhaseSpec, OptimalitySpec], Field(discriminator="kind")]


class ScenarioConfig(BaseModel):
    """
    One experiment: model, discretisation, coupling, integration and output.

    Attributes:
        name (str): Label used in comparison tables.
        model: Ring oscillator or the builtin linear test model.
        input (InputSpec): Input signal of the ring oscillator.
        m (int): Number of lines.
        stencil (str): Fast-time difference formula.
        coupling: Phase or optimality condition.
        integrator (IntegratorConfig): Step count, horizon, Newton settings.
        seed_mode (str): consistent closes the frequency; nearly_consistent
            keeps the seed frequency.
        b_frozen (float): Input value for the periodic seed transient.
        output_dir (str): Directory for emitted files.
    """
    model_config = ConfigDict(extra="forbid")

    name: str = "scenario"
    model: ModelSpec = Field(default_factory=RingOscillatorSpec)
    input: InputSpec = Field(default_factory=InputSpec)
    m: int = Field(default=100, ge=2)
    stencil: Literal["bdf1", "bdf2"] = "bdf2"
    coupling: CouplingSpec = Field(default_factory=lambda: PhaseSpec())
    integrator: IntegratorConfig = Field(default_factory=IntegratorConfig)
    seed_mode: Literal["consistent", "nearly_consistent"] = "consistent"
    b_frozen: float = Field(default=1.0, gt=0)
    output_dir: str = Field(default_factory=lambda: f"{settings.RESULTS_DIR}/scenario")

    @model_validator(mode="after")
    def indices_in_range(self) -> "ScenarioConfig":
        n_y, n_z = self.model.n_y, self.model.n_z
        c = self.coupling
        if isinstance(c, PhaseSpec):
            limit = n_y if c.variable == "differential" else n_z
            if c.index >= limit:
                raise ValueError(f"phase index {c.index} out of range for {c.variable} variables (0..{limit - 1})")
        elif c.w_y is not None:
            if len(c.w_y) != n_y or len(c.w_z) != n_z:
                raise ValueError(f"weights need lengths {n_y} and {n_z}, got {len(c.w_y)} and {len(c.w_z)}")
        min_lines = 3 if self.stencil == "bdf2" else 2
        if self.m < min_lines:
            raise ValueError(f"{self.stencil} needs at least {min_lines} lines")
        return self

    def weights(self):
        """Expanded (w_y, w_z) of an optimality coupling."""
        c = self.coupling
        if not isinstance(c, OptimalitySpec):
            raise ValueError("scenario does not use the optimality coupling")
        return expand_weights(c, self.model.n_y, self.model.n_z)


def expand_weights(spec: OptimalitySpec, n_y: int, n_z: int):
    if spec.case is None:
        return list(spec.w_y), list(spec.w_z)
    on_y = 1.0 if spec.case in ("a", "b") else 0.0
    on_z = 1.0 if spec.case in ("a", "c") else 0.0
    return [on_y] * n_y, [on_z] * n_z
