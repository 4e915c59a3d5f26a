"""
Differential index of the MOL system from 1-fullness of derivative-array
matrices, cross-checked against closed-form scalar criteria.

All matrices are written for the residual form F(t, x, x') = 0 with
Jx = dF/dx and Jv = dF/dx'. A matrix with column blocks (s0, s1, ...) is
1-full with respect to the first n_bar columns when every kernel vector has
s0 = 0; equivalently rank(B) = rank(B without its first n_bar columns) + n_bar.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import scipy.linalg
import scipy.sparse

from app.core.config import settings
from app.core.exceptions import CouplingError, InconsistentPointError, ModelError, NotLinearConstraintError
from app.services.integrator import Trajectory
from app.services.mol_assembly import (
    GridState,
    JacobianBlocks,
    MolSystem,
    Optimality,
    PhaseAlgebraic,
    PhaseDifferential,
    jacobian_blocks,
    scaled_residual_norm,
)

logger = logging.getLogger(__name__)

INDEX_ABOVE_TWO = 3
INDEX_LABELS = {1: "1", 2: "2", INDEX_ABOVE_TWO: ">2 or undefined"}


@dataclass(frozen=True, eq=False)
class OneFullnessResult:
    """
    Attributes:
        is_one_full (bool): rank_full == rank_tail + n_bar.
        rank_full (int): Numerical rank of B.
        rank_tail (int): Numerical rank of B without its first n_bar columns.
        singular_values (np.ndarray): Singular values of the equilibrated B.
        tol (float): Relative threshold used against the largest singular value.
        fragile (bool): Some singular value fell inside the fragile band.
        kernel_head (np.ndarray, optional): s0-parts of a kernel basis, one
            column per kernel vector, when requested.
    """
    is_one_full: bool
    rank_full: int
    rank_tail: int
    singular_values: np.ndarray
    tol: float
    fragile: bool
    kernel_head: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ScalarCriteria:
    """
    Closed-form index criteria and the magnitudes they are judged against.

    c1 = F31 . F13, c_alg = F32 . (df2_dx2)^-1 . df2_dx1 . F13, c2 = c1 - c_alg.
    Each criterion is judged against the product of its factors' norms, never
    against the vector it tests.
    """
    c1: float
    c_alg: float
    c2: float
    scale1: float
    scale_alg: float
    f32_norm: float
    f31_norm: float

    def nonzero(self, value: float, scale: float, tol: float) -> bool:
        return scale > 0 and abs(value) > tol * scale

    @property
    def scale2(self) -> float:
        return self.scale1 + self.scale_alg


@dataclass(frozen=True, eq=False)
class IndexReport:
    """Outcome of the index analysis at one consistent point."""
    index: int
    scalar_index: Optional[int]
    consistent: Optional[bool]
    coupling: str
    t: float
    m: int
    n_bar: int
    criteria: ScalarCriteria
    b1: OneFullnessResult
    b2: Optional[OneFullnessResult]
    T: Optional[scipy.sparse.csr_array]
    T_deviation: Optional[float]

    @property
    def label(self) -> str:
        return INDEX_LABELS[self.index]

    @property
    def fragile(self) -> bool:
        return self.b1.fragile or (self.b2 is not None and self.b2.fragile)

    def to_text(self) -> str:
        lines = [
            f"index: {self.label}",
            f"scalar_index: {INDEX_LABELS[self.scalar_index] if self.scalar_index else 'undetermined'}",
            f"consistent: {self.consistent if self.consistent is not None else 'n/a'}",
            f"coupling: {self.coupling}",
            f"t: {self.t!r}",
            f"m: {self.m}",
            f"n_bar: {self.n_bar}",
            f"c1: {self.criteria.c1!r}",
            f"c_alg: {self.criteria.c_alg!r}",
            f"c2: {self.criteria.c2!r}",
            f"B1_one_full: {self.b1.is_one_full}",
            f"B1_rank: {self.b1.rank_full}",
            f"B1_rank_tail: {self.b1.rank_tail}",
        ]
        if self.b2 is not None:
            lines += [
                f"B2_one_full: {self.b2.is_one_full}",
                f"B2_rank: {self.b2.rank_full}",
                f"B2_rank_tail: {self.b2.rank_tail}",
            ]
        lines += [
            f"rank_tol: {self.b1.tol!r}",
            f"fragile: {self.fragile}",
        ]
        if self.T is not None:
            lines.append(f"T_rank: {int(round(self.T.diagonal().sum()))}")
            lines.append(f"T_deviation_from_nu_projector: {self.T_deviation!r}")
        return "\n".join(lines) + "\n"

    def to_csv_row(self) -> Dict[str, object]:
        return {
            "t": repr(self.t),
            "coupling": self.coupling,
            "m": self.m,
            "n_bar": self.n_bar,
            "index": self.index,
            "scalar_index": self.scalar_index if self.scalar_index is not None else "",
            "consistent": "" if self.consistent is None else int(self.consistent),
            "c1": repr(self.criteria.c1),
            "c_alg": repr(self.criteria.c_alg),
            "c2": repr(self.criteria.c2),
            "b1_rank": self.b1.rank_full,
            "b1_rank_tail": self.b1.rank_tail,
            "b2_rank": self.b2.rank_full if self.b2 is not None else "",
            "b2_rank_tail": self.b2.rank_tail if self.b2 is not None else "",
            "fragile": int(self.fragile),
        }


CSV_FIELDS = [
    "t", "coupling", "m", "n_bar", "index", "scalar_index", "consistent",
    "c1", "c_alg", "c2", "b1_rank", "b1_rank_tail", "b2_rank", "b2_rank_tail", "fragile",
]


def _top_projector(blocks: JacobianBlocks) -> np.ndarray:
    """diag(I_n1, P32, 0) with P32 the orthogonal projector onto span(F32^T)."""
    n1, n2 = blocks.n1, blocks.n2
    P = np.zeros((blocks.n_bar, blocks.n_bar))
    P[:n1, :n1] = np.eye(n1)
    if blocks.velocity_coupled:
        f32 = blocks.F32
        norm2 = float(f32 @ f32)
        if norm2 > 0:
            P[n1:n1 + n2, n1:n1 + n2] = np.outer(f32, f32) / norm2
    return P


def build_B1(blocks: JacobianBlocks) -> np.ndarray:
    """
    First derivative-array matrix [[P, 0], [Jx, Jv]] of size 2 n_bar.

    The phase variants have P = diag(I, 0, 0); the optimality coupling
    additionally keeps the part of x2 seen by F32.
    """
    n = blocks.n_bar
    B = np.zeros((2 * n, 2 * n))
    B[:n, :n] = _top_projector(blocks)
    B[n:, :n] = blocks.state_jacobian()
    B[n:, n:] = blocks.velocity_jacobian()
    return B


def build_B2_reduced(blocks: JacobianBlocks) -> np.ndarray:
    """
    Kernel-equivalent reduction of the second derivative-array matrix.

    Column blocks (s0, s1, s2) of width n_bar. Rows:

        [ I on the x1, x2 parts of s0                     ]
        [ Jx              | Jv   | 0  ]
        [ dFhat/dx3 only  | Jhat | Jv ]

    The identity rows force s0 = (0, 0, s_nu), so the second-derivative
    blocks dFhat/dx1, dFhat/dx2 never meet a nonzero vector and are left out.
    Jhat = dFhat/dx' equals Jx on the differential and algebraic rows; its
    coupling row holds the velocity derivatives of the differentiated
    coupling.
    """
    n1, n2, n = blocks.n1, blocks.n2, blocks.n_bar
    Jx = blocks.state_jacobian()
    Jv = blocks.velocity_jacobian()
    Jhat = Jx.copy()
    Jhat[-1, :n1] = blocks.df3hat_dxdot1
    Jhat[-1, n1:n1 + n2] = blocks.df3hat_dxdot2
    Jhat[-1, -1] = 0.0

    rows = n1 + n2 + 2 * n
    B = np.zeros((rows, 3 * n))
    B[:n1 + n2, :n1 + n2] = np.eye(n1 + n2)
    r = n1 + n2
    B[r:r + n, :n] = Jx
    B[r:r + n, n:2 * n] = Jv
    r += n
    B[r:r + n1, n - 1] = -blocks.df1hat_dx3
    B[r:r + n, n:2 * n] = Jhat
    B[r:r + n, 2 * n:] = Jv
    return B


def _equilibrate(B: np.ndarray):
    col = np.max(np.abs(B), axis=0)
    col[col == 0] = 1.0
    Bc = B / col
    row = np.max(np.abs(Bc), axis=1)
    row[row == 0] = 1.0
    return Bc / row[:, None], col


def check_one_full(B: np.ndarray, n_bar: int, tol: Optional[float] = None, want_kernel: bool = False) -> OneFullnessResult:
    """
    Rank test for 1-fullness with respect to the first n_bar columns.

    Args:
        B (np.ndarray): Matrix with at least n_bar columns.
        n_bar (int): Width of the leading column block.
        tol (float, optional): Relative singular-value threshold; defaults to
            settings.RANK_TOL.
        want_kernel (bool): Also return the s0-parts of a kernel basis.

    Returns:
        OneFullnessResult: Ranks, singular values and the fragility flag.

    Notable:
        B is equilibrated by diagonal row and column scalings first. Both
        ranks are counted against the largest singular value of the full
        matrix.
    """
    tol = settings.RANK_TOL if tol is None else tol
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[1] < n_bar:
        raise ValueError(f"matrix needs at least {n_bar} columns, got shape {B.shape}")

    Bs, col_scale = _equilibrate(B)
    if want_kernel:
        _, sv, Vh = scipy.linalg.svd(Bs, full_matrices=True, lapack_driver="gesdd")
    else:
        sv = scipy.linalg.svdvals(Bs)
        Vh = None
    sigma_max = float(sv[0]) if sv.size else 0.0
    if sigma_max == 0.0:
        return OneFullnessResult(
            is_one_full=n_bar == 0, rank_full=0, rank_tail=0, singular_values=sv, tol=tol, fragile=False,
            kernel_head=np.eye(B.shape[1])[:n_bar] if want_kernel else None,
        )

    tail = Bs[:, n_bar:]
    sv_tail = scipy.linalg.svdvals(tail) if tail.shape[1] else np.zeros(0)
    cut = tol * sigma_max
    rank_full = int(np.sum(sv > cut))
    rank_tail = int(np.sum(sv_tail > cut))

    low, high = settings.FRAGILE_BAND_LOW * sigma_max, settings.FRAGILE_BAND_HIGH * sigma_max
    fragile = bool(
        np.any((sv >= low) & (sv <= high)) or np.any((sv_tail >= low) & (sv_tail <= high))
    )
    if fragile:
        logger.warning(
            f"Rank decision fragile: singular values inside [{settings.FRAGILE_BAND_LOW:.0e}, "
            f"{settings.FRAGILE_BAND_HIGH:.0e}] * sigma_max (rank {rank_full}, tail rank {rank_tail})"
        )

    kernel_head = None
    if want_kernel:
        # B_s = B diag(col)^-1, so kernel vectors of B are s_s / col
        kernel = Vh[rank_full:].T / col_scale[:, None]
        kernel_head = kernel[:n_bar]

    return OneFullnessResult(
        is_one_full=rank_full == rank_tail + n_bar,
        rank_full=rank_full,
        rank_tail=rank_tail,
        singular_values=sv,
        tol=tol,
        fragile=fragile,
        kernel_head=kernel_head,
    )


def _solve_constraint_block(blocks: JacobianBlocks, rhs: np.ndarray) -> np.ndarray:
    lu, piv = scipy.linalg.lu_factor(blocks.df2_dx2, check_finite=False)
    if np.min(np.abs(np.diag(lu)), initial=np.inf) == 0.0:
        raise ModelError("df2_dx2 is singular; the algebraic lines are not index one")
    return scipy.linalg.lu_solve((lu, piv), rhs, check_finite=False)


def scalar_criteria(blocks: JacobianBlocks) -> ScalarCriteria:
    F13 = blocks.F13
    c1 = float(blocks.F31 @ F13)
    gzinv_gy = _solve_constraint_block(blocks, blocks.df2_dx1)
    c_alg = float(blocks.F32 @ (gzinv_gy @ F13))
    return ScalarCriteria(
        c1=c1,
        c_alg=c_alg,
        c2=c1 - c_alg,
        scale1=float(np.linalg.norm(blocks.F31) * np.linalg.norm(F13)),
        scale_alg=float(np.linalg.norm(blocks.F32) * np.linalg.norm(gzinv_gy, 2) * np.linalg.norm(F13)),
        f32_norm=float(np.linalg.norm(blocks.F32)),
        f31_norm=float(np.linalg.norm(blocks.F31)),
    )


def scalar_index(kind: str, crit: ScalarCriteria, tol: Optional[float] = None) -> Optional[int]:
    """
    Index predicted by the closed-form criteria, or None where they decide
    nothing (optimality with F32 = 0 and c1 = 0).
    """
    tol = settings.RANK_TOL if tol is None else tol
    if kind == PhaseDifferential.kind:
        return 2 if crit.nonzero(crit.c1, crit.scale1, tol) else INDEX_ABOVE_TWO
    if kind == PhaseAlgebraic.kind:
        return 2 if crit.nonzero(crit.c_alg, crit.scale_alg, tol) else INDEX_ABOVE_TWO
    if kind == Optimality.kind:
        f32_zero = crit.f32_norm <= tol * (crit.f31_norm + crit.f32_norm)
        if f32_zero:
            return 1 if crit.nonzero(crit.c1, crit.scale1, tol) else None
        return 2 if crit.nonzero(crit.c2, crit.scale2, tol) else INDEX_ABOVE_TWO
    raise CouplingError(f"unknown coupling kind {kind}")


def _projector_from_kernel(kernel_head: np.ndarray, n_bar: int):
    basis = scipy.linalg.orth(kernel_head, rcond=settings.RANK_TOL) if kernel_head.size else np.zeros((n_bar, 0))
    dense = basis @ basis.T
    dense[np.abs(dense) < 1e-12] = 0.0
    target = np.zeros((n_bar, n_bar))
    target[-1, -1] = 1.0
    return scipy.sparse.csr_array(dense), float(np.max(np.abs(dense - target)))


def analyse_blocks(blocks: JacobianBlocks, t: float = 0.0, m: int = 0, tol: Optional[float] = None) -> IndexReport:
    """Index analysis from a set of Jacobian blocks (no consistency check)."""
    tol = settings.RANK_TOL if tol is None else tol
    n = blocks.n_bar
    crit = scalar_criteria(blocks)
    predicted = scalar_index(blocks.kind, crit, tol)

    b1 = check_one_full(build_B1(blocks), n, tol, want_kernel=True)
    b2 = None
    T = None
    T_dev = None
    if b1.is_one_full:
        index = 1
    else:
        T, T_dev = _projector_from_kernel(b1.kernel_head, n)
        b2 = check_one_full(build_B2_reduced(blocks), n, tol)
        index = 2 if b2.is_one_full else INDEX_ABOVE_TWO

    consistent = None if predicted is None else predicted == index
    if consistent is False:
        logger.warning(f"Scalar criteria predict index {INDEX_LABELS[predicted]}, rank test gives {INDEX_LABELS[index]}")
    return IndexReport(
        index=index,
        scalar_index=predicted,
        consistent=consistent,
        coupling=blocks.kind,
        t=t,
        m=m,
        n_bar=n,
        criteria=crit,
        b1=b1,
        b2=b2,
        T=T,
        T_deviation=T_dev,
    )


def determine_index(sys: MolSystem, t: float, state: GridState, velocity: GridState) -> IndexReport:
    """
    Differential index of the MOL system at a consistent point.

    Args:
        sys (MolSystem): The discretised system.
        t (float): Slow time of the point.
        state (GridState): Consistent state.
        velocity (GridState): Matching velocity.

    Returns:
        IndexReport: Rank verdict, scalar criteria and the projector T.
    """
    res = scaled_residual_norm(sys, t, state, velocity)
    if res > settings.CONSISTENCY_TOL:
        raise InconsistentPointError(
            f"point at t={t} is not consistent (scaled residual {res:.3e} > {settings.CONSISTENCY_TOL:.1e})",
            residual=res,
        )
    blocks = jacobian_blocks(sys, t, state, velocity)
    report = analyse_blocks(blocks, t=t, m=sys.m)
    logger.info(
        f"Index at t={t:.6e} ({sys.coupling.kind}, m={sys.m}): {report.label} "
        f"(c1={report.criteria.c1:.3e}, c2={report.criteria.c2:.3e})"
    )
    return report


@dataclass(frozen=True)
class QuadraticIdentity:
    c2: float
    quadratic_form: float
    deviation: float


def verify_quadratic_identity(sys: MolSystem, state: GridState) -> QuadraticIdentity:
    """
    Compare c2 with -[(S1 x1)^T W1 (S1 x1) + (S2 x2)^T W2 (S2 x2)].

    Both sides agree whenever the constraints are linear and satisfied on
    every line.
    """
    lin = sys.model.linear_constraints
    if lin is None:
        raise NotLinearConstraintError(f"{sys.model.name} has nonlinear algebraic constraints")
    if not isinstance(sys.coupling, Optimality):
        raise CouplingError("the quadratic identity concerns the optimality coupling")

    w1, w2 = sys.weight_matrices()
    s1x1 = sys.operator.apply_lines(state.y).ravel()
    s2x2 = sys.operator.apply_lines(state.z).ravel()
    F13 = -s1x1
    c1 = float((w1 * s1x1) @ F13)
    # (df2_dx2)^-1 df2_dx1 F13 line by line
    gzinv_gy = scipy.linalg.solve(lin.G_z, lin.G_y)
    mapped = (F13.reshape(sys.m, -1) @ gzinv_gy.T).ravel()
    c_alg = float((w2 * s2x2) @ mapped)
    c2 = c1 - c_alg
    quad = -(float(s1x1 @ (w1 * s1x1)) + float(s2x2 @ (w2 * s2x2)))
    denom = max(abs(quad), abs(c2))
    deviation = abs(c2 - quad) / denom if denom > 0 else 0.0
    return QuadraticIdentity(c2=c2, quadratic_form=quad, deviation=deviation)


def sweep_index(sys: MolSystem, trajectory: Trajectory, every: int = 1) -> List[IndexReport]:
    """
    determine_index at stored trajectory points n = every, 2*every, ...

    The velocity at point n is the implicit Euler difference quotient that
    produced it.
    """
    if every < 1:
        raise ValueError("every must be >= 1")
    reports = []
    for n in range(every, trajectory.n_steps + 1, every):
        dt = trajectory.times[n] - trajectory.times[n - 1]
        state = trajectory.state(n)
        velocity = sys.state_from_vector((trajectory.states[n] - trajectory.states[n - 1]) / dt)
        reports.append(determine_index(sys, float(trajectory.times[n]), state, velocity))
    return reports
