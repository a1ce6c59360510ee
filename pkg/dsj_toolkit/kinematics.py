"""Planar two-link finger kinematics and task-space stiffness.

The task space is the scalar coordinate along the grasp direction. In the
fixed mode the direction is constant; in the surface-normal mode it follows
the normal of the distal link, so its derivative with respect to the
fingertip position contributes to the task stiffness.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from dsj_toolkit.exceptions import (
    ConvergenceError,
    DomainError,
    ShapeError,
    SingularityError,
)
from dsj_toolkit.models import (
    FingerGeometry,
    Frame,
    StiffnessMatrix,
    TaskState,
)
from dsj_toolkit.schemas import GraspMode
from dsj_toolkit.settings import get_settings

logger = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-9
PINV_CUTOFF = 1e-10


def _angles(geometry: FingerGeometry, q: np.ndarray) -> tuple:
    q = np.asarray(q, dtype=float)
    if q.shape != (2,):
        raise ShapeError('Finger configuration needs two angles', [str(q)])
    a1 = geometry.base_pose.theta + q[0]
    return a1, a1 + q[1]


def forward_kinematics(geometry: FingerGeometry, q: np.ndarray) -> np.ndarray:
    """Fingertip position of the planar chain, m."""
    a1, a12 = _angles(geometry, q)
    l1, l2 = geometry.link_lengths
    return np.array([
        geometry.base_pose.x + l1 * np.cos(a1) + l2 * np.cos(a12),
        geometry.base_pose.y + l1 * np.sin(a1) + l2 * np.sin(a12),
    ])


def radial_direction(geometry: FingerGeometry, q: np.ndarray) -> np.ndarray:
    """Unit vector from the finger base to the fingertip."""
    offset = forward_kinematics(geometry, q) - np.array([
        geometry.base_pose.x,
        geometry.base_pose.y,
    ])
    return offset / np.linalg.norm(offset)


@dataclass(frozen=True)
class JacobianBundle:
    """Jacobians of the fingertip and of the grasp projection.

    Attributes:
        J: Fingertip Jacobian, 2×2
        dJT_dq: dJT_dq[i, k, j] = ∂J[k, i]/∂q[j]
        J_p: Grasp projection row, 1×2
        dJpT_dx: Derivative of J_pᵀ with respect to fingertip position, 2×2
    """

    J: np.ndarray
    dJT_dq: np.ndarray
    J_p: np.ndarray
    dJpT_dx: np.ndarray


def _jacobian(geometry: FingerGeometry, q: np.ndarray) -> np.ndarray:
    a1, a12 = _angles(geometry, q)
    l1, l2 = geometry.link_lengths
    s1, c1 = np.sin(a1), np.cos(a1)
    s12, c12 = np.sin(a12), np.cos(a12)
    return np.array([
        [-l1 * s1 - l2 * s12, -l2 * s12],
        [l1 * c1 + l2 * c12, l2 * c12],
    ])


def _jacobian_derivative(geometry: FingerGeometry, q: np.ndarray):
    a1, a12 = _angles(geometry, q)
    l1, l2 = geometry.link_lengths
    s1, c1 = np.sin(a1), np.cos(a1)
    s12, c12 = np.sin(a12), np.cos(a12)
    dJ_dq1 = np.array([
        [-l1 * c1 - l2 * c12, -l2 * c12],
        [-l1 * s1 - l2 * s12, -l2 * s12],
    ])
    dJ_dq2 = np.array([
        [-l2 * c12, -l2 * c12],
        [-l2 * s12, -l2 * s12],
    ])
    dJ = np.stack([dJ_dq1, dJ_dq2], axis=-1)
    return np.transpose(dJ, (1, 0, 2))


def _pinv(matrix: np.ndarray) -> np.ndarray:
    singular = np.linalg.svd(matrix, compute_uv=False)
    if singular[-1] <= PINV_CUTOFF * singular[0]:
        raise SingularityError(
            'Jacobian is rank deficient',
            'jacobian',
        )
    return np.linalg.pinv(matrix, rcond=PINV_CUTOFF)


def jacobians(
    geometry: FingerGeometry,
    q: np.ndarray,
    grasp_direction: Optional[np.ndarray] = None,
    mode: GraspMode = GraspMode.FIXED,
) -> JacobianBundle:
    """Analytic Jacobians at configuration q.

    Args:
        geometry: Finger geometry
        q: Joint angles, rad
        grasp_direction: Unit vector, required in the fixed mode
        mode: Fixed direction or distal link normal

    Returns:
        Jacobian bundle

    Raises:
        DomainError: If the grasp direction is not a unit vector
        SingularityError: If the surface-normal mode meets a singular J
    """
    J = _jacobian(geometry, q)
    dJT_dq = _jacobian_derivative(geometry, q)

    if GraspMode(mode) is GraspMode.SURFACE_NORMAL:
        _, a12 = _angles(geometry, q)
        direction = np.array([-np.sin(a12), np.cos(a12)])
        d_direction_dq = np.array([
            [-np.cos(a12), -np.cos(a12)],
            [-np.sin(a12), -np.sin(a12)],
        ])
        dJpT_dx = d_direction_dq @ _pinv(J)
    else:
        if grasp_direction is None:
            raise DomainError(
                'Fixed grasp mode needs a direction', ['grasp_direction']
            )
        direction = np.asarray(grasp_direction, dtype=float)
        if direction.shape != (2,):
            raise ShapeError(
                'Grasp direction must be planar', [str(direction.shape)]
            )
        if abs(np.linalg.norm(direction) - 1.0) > UNIT_TOLERANCE:
            raise DomainError(
                'Grasp direction must be a unit vector',
                [f'norm {np.linalg.norm(direction):.12g}'],
            )
        dJpT_dx = np.zeros((2, 2))

    return JacobianBundle(
        J=J, dJT_dq=dJT_dq, J_p=direction[np.newaxis, :], dJpT_dx=dJpT_dx
    )


def task_space_stiffness(
    K: StiffnessMatrix, bundle: JacobianBundle, F_p: float = 0.0
) -> StiffnessMatrix:
    """Stiffness felt along the grasp direction.

    K_p = J_p⁺ᵀ J⁺ᵀ (K − (dJᵀ/dq J_pᵀ + Jᵀ dJ_pᵀ/dx J) F_p) J⁺ J_p⁺

    Args:
        K: Joint-level stiffness
        bundle: Jacobians at the current configuration
        F_p: Task force along the grasp direction, N

    Returns:
        1×1 task-level stiffness, N/m

    Raises:
        SingularityError: If J is singular beyond the cutoff
    """
    J_pinv = _pinv(bundle.J)
    J_p_pinv = np.linalg.pinv(bundle.J_p, rcond=PINV_CUTOFF)
    force = bundle.J_p[0] * F_p
    geometric = np.einsum('ikj,k->ij', bundle.dJT_dq, force)
    geometric += bundle.J.T @ bundle.dJpT_dx @ bundle.J * F_p
    effective = K.entries - geometric
    K_p = J_p_pinv.T @ J_pinv.T @ effective @ J_pinv @ J_p_pinv
    return StiffnessMatrix(K_p, Frame.TASK)


@dataclass(frozen=True)
class GraspCurve:
    """Grasp force against deviation along the grasp direction.

    Attributes:
        deviation: Δp grid, m
        force: F_p at every deviation, N
        task_stiffness: K_p at the converged force, N/m
        iterations: Fixed-point iterations per point
        tip: Fingertip position at the equilibrium, m
    """

    deviation: np.ndarray
    force: np.ndarray
    task_stiffness: np.ndarray
    iterations: np.ndarray
    tip: np.ndarray

    @property
    def states(self) -> tuple:
        """One task state per deviation."""
        return tuple(
            TaskState(self.tip, float(delta_p), float(force))
            for delta_p, force in zip(self.deviation, self.force)
        )


def grasp_force_curve(
    geometry: FingerGeometry,
    K: StiffnessMatrix,
    q0: np.ndarray,
    deviations: np.ndarray,
    grasp_direction: Optional[np.ndarray] = None,
    mode: GraspMode = GraspMode.FIXED,
    damping: Optional[float] = None,
    tolerance: Optional[float] = None,
    max_iter: Optional[int] = None,
) -> GraspCurve:
    """Solve F_p = K_p(F_p) Δp at every deviation.

    Uses the damped iteration F ← (1 − β) F + β K_p(F) Δp. Iteration
    settings default to the process settings.

    Args:
        geometry: Finger geometry
        K: Joint-level stiffness of the chosen design point
        q0: Equilibrium configuration, rad
        deviations: Δp grid, m
        grasp_direction: Unit vector for the fixed mode
        mode: Grasp direction mode
        damping: Relaxation factor β
        tolerance: Relative convergence tolerance
        max_iter: Iteration cap per point

    Returns:
        Grasp curve

    Raises:
        ConvergenceError: If a point does not converge
    """
    settings = get_settings()
    beta = settings.FIXED_POINT_DAMPING if damping is None else damping
    tol = settings.FIXED_POINT_TOLERANCE if tolerance is None else tolerance
    cap = settings.FIXED_POINT_MAX_ITER if max_iter is None else max_iter

    bundle = jacobians(geometry, q0, grasp_direction, mode)
    deviations = np.asarray(deviations, dtype=float)
    forces, stiffnesses, counts = [], [], []
    for delta_p in deviations:
        K_p = float(task_space_stiffness(K, bundle, 0.0).entries[0, 0])
        force = K_p * delta_p
        iterations = 0
        while delta_p != 0.0:
            iterations += 1
            K_p = float(task_space_stiffness(K, bundle, force).entries[0, 0])
            update = (1.0 - beta) * force + beta * K_p * delta_p
            change = abs(update - force)
            force = update
            if change <= tol * max(abs(force), np.finfo(float).tiny):
                break
            if iterations >= cap or not np.isfinite(force):
                logger.error(
                    'Grasp force diverged at deviation %.6g m', delta_p
                )
                raise ConvergenceError(
                    'Grasp force iteration did not converge',
                    float(change),
                    iterations,
                )
        if delta_p != 0.0:
            K_p = float(task_space_stiffness(K, bundle, force).entries[0, 0])
        forces.append(force)
        stiffnesses.append(K_p)
        counts.append(iterations)

    return GraspCurve(
        deviation=deviations,
        force=np.array(forces),
        task_stiffness=np.array(stiffnesses),
        iterations=np.array(counts),
        tip=forward_kinematics(geometry, q0),
    )
