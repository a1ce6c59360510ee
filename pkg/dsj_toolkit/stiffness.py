"""Joint-level stiffness algebra of the differential spiral joint.

Three tendon paths act in series on every joint: the position path (P),
the spiral path (S) and the joint path (J). Their compliances add, and the
spiral path is the only one whose stiffness changes with the spiral joint
angle q_s.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from typing import Optional, Protocol, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import root

from dsj_toolkit.exceptions import (
    ConvergenceError,
    DomainError,
    InfeasibleTargetError,
    NumericalError,
    ShapeError,
    SingularityError,
)
from dsj_toolkit.models import (
    Frame,
    JointState,
    PulleyGeometry,
    SpringConstants,
    StiffnessMatrix,
    TendonState,
)

logger = logging.getLogger(__name__)

FEASIBILITY_MARGIN = 1e-9
ORDERING_TOLERANCE = 1e-9
RESIDUAL_TOLERANCE = 1e-10

MatrixLike = Union[StiffnessMatrix, np.ndarray]
TorqueModel = Callable[[np.ndarray], np.ndarray]


def _entries(K: MatrixLike) -> np.ndarray:
    if isinstance(K, StiffnessMatrix):
        return K.entries
    return np.asarray(K, dtype=float)


def _symmetric(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def _compliance(K: MatrixLike, path: str) -> np.ndarray:
    """Inverse of a positive definite stiffness via Cholesky."""
    entries = _entries(K)
    try:
        factor = cho_factor(entries, lower=True)
    except (LinAlgError, ValueError) as exc:
        raise SingularityError(
            f'{path} path stiffness is not positive definite', path
        ) from exc
    return _symmetric(cho_solve(factor, np.eye(entries.shape[0])))


def _series(*compliances: np.ndarray, path: str) -> np.ndarray:
    return _compliance(_symmetric(sum(compliances)), path)


def _transmission(
    outer: np.ndarray, pulleys: PulleyGeometry, path: str
) -> np.ndarray:
    """Tendon displacement per unit joint rotation, outer·R_D⁻¹·R_J."""
    try:
        return outer @ np.linalg.solve(pulleys.R_D, pulleys.R_J)
    except LinAlgError as exc:
        raise SingularityError('R_D is singular', path) from exc


@dataclass(frozen=True)
class SeriesStiffnessBreakdown:
    """Joint-level stiffness of every path and of their series combination.

    Attributes:
        K_P_j: Position path
        K_S_j: Spiral path
        K_J_j: Joint path
        K_passive: Series combination of the three paths
        K_max: Series combination with a rigid spiral path
    """

    K_P_j: StiffnessMatrix
    K_S_j: StiffnessMatrix
    K_J_j: StiffnessMatrix
    K_passive: StiffnessMatrix
    K_max: StiffnessMatrix

    def __post_init__(self):
        gap = np.linalg.eigvalsh(self.K_max.entries - self.K_passive.entries)
        floor = -ORDERING_TOLERANCE * abs(self.K_max.trace)
        if gap[0] < floor:
            raise NumericalError(
                'Passive stiffness exceeds K_max',
                [f'eigenvalue {gap[0]:.6g}'],
            )


def tendon_torque(
    pulleys: PulleyGeometry, springs: SpringConstants, tendons: TendonState
) -> np.ndarray:
    """Net joint torque of the joint tendons, R_Jᵀ k_j (L_J − L_m).

    Args:
        pulleys: Transmission geometry
        springs: Tendon pair stiffness
        tendons: Tendon length changes

    Returns:
        Joint torque vector, N·m

    Raises:
        ShapeError: If the tendon vectors do not match R_J
    """
    if tendons.L_J.size != pulleys.R_J.shape[0]:
        raise ShapeError(
            'Tendon vectors must match R_J',
            [f'{tendons.L_J.size} tendons, R_J {pulleys.R_J.shape}'],
        )
    return pulleys.R_J.T @ (springs.k_j * (tendons.L_J - tendons.L_m))


def joint_stiffness_general(
    torque_model: TorqueModel, q0: JointState, h: float = 1e-6
) -> StiffnessMatrix:
    """Stiffness K = −∂τ/∂q by central differences of a torque model.

    The model returns the restoring torque, so a stable equilibrium gives a
    positive matrix. Because the model may vary its moment arms with q,
    both the radius-change term and the stretch term are captured. The
    result is symmetrized but not required to be definite.

    Args:
        torque_model: Maps joint angles to restoring torque
        q0: Configuration to linearize at
        h: Finite difference step, rad

    Returns:
        Joint-level stiffness matrix

    Raises:
        DomainError: If h is not positive
        NumericalError: If the model returns non-finite torque
    """
    if not h > 0:
        raise DomainError('Finite difference step must be positive', ['h'])
    q = np.array(q0.q, dtype=float)
    columns = []
    for j in range(q.size):
        step = np.zeros_like(q)
        step[j] = h
        forward = np.asarray(torque_model(q + step), dtype=float)
        backward = np.asarray(torque_model(q - step), dtype=float)
        finite = np.all(np.isfinite(forward)) and np.all(np.isfinite(backward))
        if not finite:
            raise NumericalError(
                'Torque model returned non-finite values',
                [f'joint {j}', f'q {q.tolist()}'],
            )
        columns.append(-(forward - backward) / (2.0 * h))
    K = np.column_stack(columns)
    return StiffnessMatrix(_symmetric(K), Frame.JOINT)


def position_path_stiffness(
    pulleys: PulleyGeometry,
    springs: SpringConstants,
    level: Frame = Frame.JOINT,
) -> StiffnessMatrix:
    """Stiffness of the position path.

    Modeled like the spiral path with R_P in place of R_S:
    (R_P R_D⁻¹ R_J)ᵀ k_p (R_P R_D⁻¹ R_J) at joint level, divided by n² at
    differential level.
    """
    B = _transmission(pulleys.R_P, pulleys, 'P')
    K = springs.k_p * (B.T @ B)
    if Frame(level) is Frame.DIFFERENTIAL:
        return StiffnessMatrix(K / pulleys.n**2, Frame.DIFFERENTIAL)
    return StiffnessMatrix(K, Frame.JOINT)


def joint_path_stiffness(
    pulleys: PulleyGeometry, springs: SpringConstants
) -> StiffnessMatrix:
    """Stiffness of the joint path, R_Jᵀ k_j R_J."""
    return StiffnessMatrix(
        springs.k_j * (pulleys.R_J.T @ pulleys.R_J), Frame.JOINT
    )


def compose_passive(
    K_P_d: MatrixLike, K_S_d: MatrixLike, K_J_j: MatrixLike, n: float
) -> SeriesStiffnessBreakdown:
    """Combine the three paths in series.

    K_passive⁻¹ = n⁻² K_P,d⁻¹ + n⁻² K_S,d⁻¹ + K_J,j⁻¹

    Args:
        K_P_d: Position path, differential level
        K_S_d: Spiral path, differential level
        K_J_j: Joint path, joint level
        n: Amplification ratio

    Returns:
        Breakdown with every path at joint level, K_passive and K_max

    Raises:
        SingularityError: If a path is not positive definite
    """
    if not n > 0:
        raise DomainError('Amplification ratio must be positive', ['n'])
    scale = n**2
    K_P_j = scale * _entries(K_P_d)
    K_S_j = scale * _entries(K_S_d)
    K_J = _entries(K_J_j)
    C_P = _compliance(K_P_j, 'P')
    C_S = _compliance(K_S_j, 'S')
    C_J = _compliance(K_J, 'J')
    return SeriesStiffnessBreakdown(
        K_P_j=StiffnessMatrix(_symmetric(K_P_j)),
        K_S_j=StiffnessMatrix(_symmetric(K_S_j)),
        K_J_j=StiffnessMatrix(_symmetric(K_J)),
        K_passive=StiffnessMatrix(_series(C_P, C_S, C_J, path='passive')),
        K_max=StiffnessMatrix(_series(C_P, C_J, path='max')),
    )


def _rigid_spiral_compliance(
    pulleys: PulleyGeometry, springs: SpringConstants
) -> np.ndarray:
    C_P = _compliance(position_path_stiffness(pulleys, springs), 'P')
    C_J = _compliance(joint_path_stiffness(pulleys, springs), 'J')
    return C_P + C_J


def k_max(
    pulleys: PulleyGeometry, springs: SpringConstants
) -> StiffnessMatrix:
    """Upper limit of the passive stiffness, reached with a rigid spiral.

    Raises:
        SingularityError: If the position or joint path is singular
    """
    C = _rigid_spiral_compliance(pulleys, springs)
    return StiffnessMatrix(_series(C, path='max'), Frame.JOINT)


def required_spiral_stiffness(
    K_desired: MatrixLike,
    pulleys: PulleyGeometry,
    springs: SpringConstants,
    q_s: Optional[float] = None,
) -> StiffnessMatrix:
    """Spiral path stiffness that makes the series combination hit a target.

    K_S,j = (K_desired⁻¹ − n⁻² K_P,d⁻¹ − K_J,j⁻¹)⁻¹, defined only for
    0 ≺ K_desired ≺ K_max.

    Args:
        K_desired: Joint-level target
        pulleys: Transmission geometry
        springs: Tendon pair stiffness
        q_s: Spiral angle of the target, reported on failure

    Returns:
        Positive definite joint-level spiral stiffness

    Raises:
        InfeasibleTargetError: If the target is not strictly between 0 and
            K_max
    """
    target = _symmetric(_entries(K_desired))
    C_max = _rigid_spiral_compliance(pulleys, springs)
    K_upper = _series(C_max, path='max')
    margin = FEASIBILITY_MARGIN * float(np.trace(K_upper))

    lowest = float(np.linalg.eigvalsh(target)[0])
    if lowest <= margin:
        raise InfeasibleTargetError(
            'Stiffness target must be positive definite', lowest, q_s
        )
    headroom = float(np.linalg.eigvalsh(K_upper - target)[0])
    if headroom <= margin:
        raise InfeasibleTargetError(
            'Stiffness target must stay below K_max', headroom, q_s
        )

    C_S = _compliance(target, 'desired') - C_max
    return StiffnessMatrix(_series(C_S, path='S'), Frame.JOINT)


def _diagonal_radii(R_S: np.ndarray, dof: int) -> np.ndarray:
    R_S = np.asarray(R_S, dtype=float)
    if R_S.ndim == 2:
        if R_S.shape != (dof, dof) or np.any(R_S != np.diag(np.diag(R_S))):
            raise ShapeError(
                'R_S must be a diagonal matrix', [f'shape {R_S.shape}']
            )
        R_S = np.diag(R_S)
    if R_S.shape != (dof,):
        raise ShapeError(
            f'R_S must hold {dof} radii', [f'shape {R_S.shape}']
        )
    if np.any(R_S < 0) or not np.all(np.isfinite(R_S)):
        raise DomainError('Spiral radii must be non-negative', ['R_S'])
    return R_S


def spiral_stiffness_from_radii(
    R_S: np.ndarray, pulleys: PulleyGeometry, springs: SpringConstants
) -> StiffnessMatrix:
    """Instantaneous spiral path stiffness at given spiral radii.

    (R_S R_D⁻¹ R_J)ᵀ k_s (R_S R_D⁻¹ R_J)

    Args:
        R_S: Diagonal radius matrix or vector of radii, m
        pulleys: Transmission geometry
        springs: Tendon pair stiffness

    Returns:
        Joint-level spiral stiffness
    """
    radii = _diagonal_radii(R_S, pulleys.dof)
    B = _transmission(np.diag(radii), pulleys, 'S')
    return StiffnessMatrix(springs.k_s * (B.T @ B), Frame.JOINT)


def coupled_stiffness_2dof(
    r_s1: float, r_s2: float, n: float, k_s: float
) -> StiffnessMatrix:
    """Closed-form spiral stiffness of the coupled two-joint finger.

    Returns:
        n² k_s [[r_s1² + r_s2², r_s2²], [r_s2², r_s2²]]
    """
    if r_s1 < 0 or r_s2 < 0:
        raise DomainError(
            'Spiral radii must be non-negative', ['r_s1', 'r_s2']
        )
    gain = n**2 * k_s
    outer = r_s2**2
    return StiffnessMatrix(
        gain * np.array([[r_s1**2 + outer, outer], [outer, outer]]),
        Frame.JOINT,
    )


class RadiusLaw(Protocol):
    """Radius of every spiral joint as a function of its own angle."""

    def radius(self, angles: np.ndarray) -> np.ndarray:
        """Radius r_i(angles_i) of every joint, m."""

    def slope(self, angles: np.ndarray) -> np.ndarray:
        """Derivative dr_i/dq_s at angles_i, m/rad."""

    def wrap(self, start: np.ndarray, stop: np.ndarray) -> np.ndarray:
        """Wrapped tendon length ∫ r_i dv from start_i to stop_i, m."""


@dataclass(frozen=True)
class ConstantRadius:
    """Radius law of plain circular pulleys."""

    radii: np.ndarray

    def radius(self, angles: np.ndarray) -> np.ndarray:
        return np.broadcast_to(
            np.asarray(self.radii, dtype=float), np.shape(angles)
        ).copy()

    def slope(self, angles: np.ndarray) -> np.ndarray:
        return np.zeros(np.shape(angles))

    def wrap(self, start: np.ndarray, stop: np.ndarray) -> np.ndarray:
        return np.asarray(self.radii, dtype=float) * (
            np.asarray(stop) - np.asarray(start)
        )


class SpiralPathTorque:
    """Nonlinear torque of the spiral path alone.

    A joint-space deflection u of the spiral path turns spiral i by
    φ = R_D⁻¹ R_J u. Its tendon then stretches by the wrapped length
    s_i = ∫ r_i over [q_s, q_s + φ_i] and acts with moment arm
    r_i(q_s + φ_i).
    """

    def __init__(
        self,
        law: RadiusLaw,
        pulleys: PulleyGeometry,
        springs: SpringConstants,
        q_s: float,
    ):
        self.law = law
        self.k_s = springs.k_s
        self.q_s = float(q_s)
        self.A = _transmission(np.eye(pulleys.dof), pulleys, 'S')

    def _state(self, u: np.ndarray) -> tuple:
        phi = self.A @ np.asarray(u, dtype=float)
        start = np.full_like(phi, self.q_s)
        angles = start + phi
        return (
            self.law.radius(angles),
            self.law.slope(angles),
            self.law.wrap(start, angles),
        )

    def elastic_torque(self, u: np.ndarray) -> np.ndarray:
        """Torque the path transmits at deflection u, N·m."""
        radius, _, stretch = self._state(u)
        return self.A.T @ (radius * self.k_s * stretch)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        """Restoring torque at deflection u, N·m."""
        return -self.elastic_torque(u)

    def stiffness_terms(self, u: np.ndarray) -> tuple:
        """Both terms of the stiffness at deflection u.

        Returns:
            (moment arm change term, stretch term), each a matrix
        """
        radius, slope, stretch = self._state(u)
        arm_change = self.A.T @ np.diag(self.k_s * stretch * slope) @ self.A
        stretch_term = self.A.T @ np.diag(self.k_s * radius**2) @ self.A
        return arm_change, stretch_term

    def tangent(self, u: np.ndarray) -> np.ndarray:
        """Tangent stiffness −∂τ/∂u, N·m/rad."""
        arm_change, stretch_term = self.stiffness_terms(u)
        return arm_change + stretch_term


class DSJTorqueModel:
    """Restoring torque of the complete joint for a joint deflection.

    The linear P and J paths and the nonlinear spiral path carry one common
    torque. The spiral share u of a deflection δq solves
    u + C_lin τ_S(u) = δq, where C_lin is the compliance of the linear
    paths.
    """

    def __init__(
        self,
        law: RadiusLaw,
        pulleys: PulleyGeometry,
        springs: SpringConstants,
        q_s: float,
        xtol: float = 1e-14,
    ):
        self.spiral = SpiralPathTorque(law, pulleys, springs, q_s)
        self.C_lin = _rigid_spiral_compliance(pulleys, springs)
        self.xtol = xtol
        K_S = self.spiral.tangent(np.zeros(pulleys.dof))
        try:
            K_passive = _series(
                self.C_lin, _compliance(K_S, 'S'), path='passive'
            )
            self._initial = cho_solve(cho_factor(K_S), K_passive)
        except (LinAlgError, SingularityError):
            self._initial = np.eye(pulleys.dof)

    def linearized(self) -> StiffnessMatrix:
        """Stiffness of the joint at equilibrium."""
        K_S = self.spiral.tangent(np.zeros(self.C_lin.shape[0]))
        C_S = _compliance(K_S, 'S')
        return StiffnessMatrix(
            _series(self.C_lin, C_S, path='passive'), Frame.JOINT
        )

    def spiral_share(self, dq: np.ndarray) -> np.ndarray:
        """Deflection taken by the spiral path for a joint deflection."""
        dq = np.asarray(dq, dtype=float)
        if not np.any(dq):
            return np.zeros_like(dq)

        def residual(u):
            value = u + self.C_lin @ self.spiral.elastic_torque(u) - dq
            jac = np.eye(u.size) + self.C_lin @ self.spiral.tangent(u)
            return value, jac

        solution = root(
            residual,
            self._initial @ dq,
            jac=True,
            method='hybr',
            options={'xtol': self.xtol},
        )
        value, _ = residual(solution.x)
        error = float(np.linalg.norm(value))
        scale = max(
            np.linalg.norm(dq),
            np.linalg.norm(solution.x),
            np.linalg.norm(dq - solution.x),
        )
        if not np.isfinite(error) or error > RESIDUAL_TOLERANCE * scale:
            raise ConvergenceError(
                'Series torque balance did not converge',
                error,
                int(solution.nfev),
            )
        return solution.x

    def __call__(self, dq: np.ndarray) -> np.ndarray:
        """Restoring torque at joint deflection dq, N·m."""
        return self.spiral(self.spiral_share(dq))
