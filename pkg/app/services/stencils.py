"""
Periodic finite-difference formulas on the fast time scale and their circulant
matrix form.

Lines sit at t2_i = i*h, i = 0..m-1, h = 1/m. A stencil with offsets -q..p
approximates the t2-derivative on line i as

    D_i(x) = (1/h) * sum_j alpha_j * x_{(i + j) mod m}.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np
import scipy.linalg

from app.core.exceptions import StencilError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DifferenceStencil:
    """
    Coefficients alpha_{-q}, ..., alpha_p of a periodic difference formula.

    Attributes:
        name (str): Registry name (``bdf1``, ``bdf2``).
        coeffs (tuple): alpha_{-q} .. alpha_p, lowest offset first.
        q (int): Number of backward offsets.
        p (int): Number of forward offsets.
        order (int): Consistency order.
    """
    name: str
    coeffs: tuple
    q: int
    p: int
    order: int

    def __post_init__(self) -> None:
        if len(self.coeffs) != self.p + self.q + 1:
            raise StencilError(f"{self.name}: expected {self.p + self.q + 1} coefficients, got {len(self.coeffs)}")
        scale = max(abs(a) for a in self.coeffs)
        if abs(sum(self.coeffs)) > 1e-14 * scale:
            raise StencilError(f"{self.name}: coefficients must sum to zero")

    @property
    def offsets(self) -> range:
        return range(-self.q, self.p + 1)

    def terms(self):
        """Yield (offset, alpha) pairs in fixed order."""
        return zip(self.offsets, self.coeffs)


def bdf1() -> DifferenceStencil:
    return DifferenceStencil(name="bdf1", coeffs=(-1.0, 1.0), q=1, p=0, order=1)


def bdf2() -> DifferenceStencil:
    return DifferenceStencil(name="bdf2", coeffs=(0.5, -2.0, 1.5), q=2, p=0, order=2)


_REGISTRY = {"bdf1": bdf1, "bdf2": bdf2}


def stencil_by_name(name: str) -> DifferenceStencil:
    try:
        return _REGISTRY[name.lower()]()
    except KeyError:
        raise StencilError(f"Unknown stencil '{name}'. Available: {sorted(_REGISTRY)}") from None


def apply(stencil: DifferenceStencil, values: Sequence, i: int) -> np.ndarray:
    """
    Evaluate the difference formula on a single line.

    Args:
        stencil (DifferenceStencil): The formula.
        values (Sequence): m samples (scalars or vectors), one per line.
        i (int): Line index in 0..m-1.

    Returns:
        np.ndarray: D_i of the samples.
    """
    values = np.asarray(values, dtype=float)
    m = values.shape[0]
    if not 0 <= i < m:
        raise StencilError(f"line index {i} outside 0..{m - 1}")
    acc = np.zeros(values.shape[1:])
    for j, alpha in stencil.terms():
        acc = acc + alpha * values[(i + j) % m]
    return acc * m


class CirculantOperator:
    """
    Matrix form S of a stencil on m periodic lines, S[i, (i+j) mod m] = alpha_j / h.

    The Kronecker lifts S (x) I_n act on line-major, component-minor stacked
    vectors and are built on first request.
    """

    def __init__(self, stencil: DifferenceStencil, m: int) -> None:
        self.stencil = stencil
        self.m = m
        self.h = 1.0 / m
        column = np.zeros(m)
        # scipy's circulant(c) has C[i, k] = c[(i - k) mod m]
        for j, alpha in stencil.terms():
            column[(-j) % m] += alpha * m
        self.S = scipy.linalg.circulant(column)
        self._lifts: Dict[int, np.ndarray] = {}

    def apply_lines(self, values: np.ndarray) -> np.ndarray:
        """D applied to every line of an (m, n) array at once."""
        values = np.asarray(values, dtype=float)
        out = np.zeros_like(values)
        for j, alpha in self.stencil.terms():
            out += alpha * np.roll(values, -j, axis=0)
        return out * self.m

    def lift(self, n: int) -> np.ndarray:
        """S (x) I_n."""
        if n not in self._lifts:
            self._lifts[n] = np.kron(self.S, np.eye(n))
        return self._lifts[n]

    def __repr__(self) -> str:
        return f"CirculantOperator(stencil={self.stencil.name}, m={self.m})"


def build_matrix(stencil: DifferenceStencil, m: int) -> CirculantOperator:
    if m <= stencil.p + stencil.q:
        raise StencilError(f"{stencil.name} needs m > {stencil.p + stencil.q} lines, got m={m}")
    return CirculantOperator(stencil, m)
