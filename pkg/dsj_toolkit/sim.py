"""Numerical counterparts of the stiffness validation experiments."""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from dsj_toolkit.exceptions import (
    DomainError,
    RegressionError,
    ShapeError,
    SingularityError,
    StepSizeError,
)
from dsj_toolkit.models import DynamicsParams, Frame, StiffnessMatrix
from dsj_toolkit.stiffness import TorqueModel

logger = logging.getLogger(__name__)

ENERGY_TOLERANCE = 1e-9
SETTLING_BAND = 0.02
MIN_STEPS = 100


@dataclass(frozen=True)
class EllipseResult:
    """Stiffness regressed from torques on a circle of deviations.

    Attributes:
        K_regressed: Fitted joint-level stiffness
        semi_axes: (major, minor) eigenvalues, N·m/rad
        orientation: Major axis angle in (−π/2, π/2], rad
        deviation_radius: Circle radius, rad
        deviations: Sampled deviations, shape (n, 2)
        torques: Compensatory torques, shape (n, 2)
    """

    K_regressed: StiffnessMatrix
    semi_axes: np.ndarray
    orientation: float
    deviation_radius: float
    deviations: np.ndarray
    torques: np.ndarray


def ellipse_axes(K: StiffnessMatrix) -> Tuple[np.ndarray, float]:
    """Semi-axes (major, minor) and major axis orientation of a 2×2 K."""
    values, vectors = np.linalg.eigh(K.entries)
    major = vectors[:, -1]
    angle = math.atan2(major[1], major[0])
    if angle <= -math.pi / 2:
        angle += math.pi
    elif angle > math.pi / 2:
        angle -= math.pi
    return values[::-1].copy(), angle


def stiffness_ellipse(
    torque_model: TorqueModel,
    q0: np.ndarray,
    radius: float = math.radians(20.0),
    n_samples: int = 72,
) -> EllipseResult:
    """Fit τ = −K δq to torques sampled on a circle around q0.

    Args:
        torque_model: Maps joint angles to restoring torque
        q0: Centre of the circle, rad
        radius: Circle radius, rad
        n_samples: Evenly spaced samples on the circle

    Returns:
        Regressed stiffness and its ellipse

    Raises:
        RegressionError: If the samples do not span the plane or the fit
            is not positive semidefinite
    """
    q0 = np.asarray(q0, dtype=float)
    if q0.shape != (2,):
        raise ShapeError('Ellipse regression is planar', [str(q0.shape)])
    if not radius > 0:
        raise DomainError('Deviation radius must be positive', ['radius'])

    angles = 2.0 * np.pi * np.arange(n_samples) / n_samples
    deviations = radius * np.column_stack([np.cos(angles), np.sin(angles)])
    reference = np.asarray(torque_model(q0), dtype=float)
    torques = np.array([
        np.asarray(torque_model(q0 + dq), dtype=float) - reference
        for dq in deviations
    ])

    solution, _, rank, _ = np.linalg.lstsq(deviations, torques, rcond=None)
    if rank < 2:
        raise RegressionError(
            'Deviation samples do not span the joint plane',
            [f'rank {rank}', f'{n_samples} samples'],
        )
    K = -solution.T
    K_regressed = StiffnessMatrix(0.5 * (K + K.T), Frame.JOINT)
    if not K_regressed.is_psd:
        raise RegressionError(
            'Regressed stiffness is not positive semidefinite',
            [f'eigenvalues {K_regressed.eigenvalues.tolist()}'],
        )
    semi_axes, orientation = ellipse_axes(K_regressed)
    return EllipseResult(
        K_regressed=K_regressed,
        semi_axes=semi_axes,
        orientation=orientation,
        deviation_radius=radius,
        deviations=deviations,
        torques=torques,
    )


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled trajectory.

    Attributes:
        t: Sample times, s
        q: Joint angles, rad, shape (N, dof)
        qdot: Joint velocities, rad/s, shape (N, dof)
        tau: Spring torque, N·m, shape (N, dof)
    """

    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        if not (len(self.t) == len(self.q) == len(self.qdot) == len(self.tau)):
            raise ShapeError(
                'Time series columns must have equal length',
                [str(len(self.t))],
            )
        if len(self.t) > 1:
            steps = np.diff(self.t)
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
                raise DomainError('Time series must be uniform', ['t'])

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0


def _factor(matrix: np.ndarray, path: str):
    try:
        return cho_factor(matrix, lower=True)
    except LinAlgError as exc:
        raise SingularityError(
            f'{path} matrix is not positive definite', path
        ) from exc


def simulate_step_response(
    K_passive: StiffnessMatrix,
    dynamics: DynamicsParams,
    q_cmd: np.ndarray,
    horizon: float,
    dt: float,
    q_init: Optional[np.ndarray] = None,
) -> TimeSeries:
    """Integrate M q̈ + B q̇ + K (q − q_cmd) = 0 from rest with RK4.

    Args:
        K_passive: Constant joint stiffness
        dynamics: Inertia and damping
        q_cmd: Commanded joint angles, rad
        horizon: Simulated time, s
        dt: Fixed step, s
        q_init: Initial angles, rad (zero by default)

    Returns:
        Trajectory sampled at every step

    Raises:
        DomainError: If dt is not positive or the horizon is shorter than
            100 steps
        StepSizeError: If the energy grows between steps
    """
    if not dt > 0:
        raise DomainError('Time step must be positive', ['dt'])
    if horizon < MIN_STEPS * dt:
        raise DomainError(
            f'Horizon must cover at least {MIN_STEPS} steps',
            [f'horizon {horizon}', f'dt {dt}'],
        )
    K = K_passive.entries
    M = dynamics.inertia
    B = dynamics.damping
    q_cmd = np.asarray(q_cmd, dtype=float)
    dof = K.shape[0]
    if q_cmd.shape != (dof,) or M.shape != K.shape:
        raise ShapeError(
            'Step command, stiffness and inertia must agree',
            [f'q_cmd {q_cmd.shape}', f'K {K.shape}', f'M {M.shape}'],
        )
    _factor(K, 'stiffness')
    inertia = _factor(M, 'inertia')
    MinvK = cho_solve(inertia, K)
    MinvB = cho_solve(inertia, B)

    def derivative(state):
        q, v = state[:dof], state[dof:]
        return np.concatenate([v, -MinvK @ (q - q_cmd) - MinvB @ v])

    def energy(state):
        error = state[:dof] - q_cmd
        v = state[dof:]
        return 0.5 * (v @ M @ v) + 0.5 * (error @ K @ error)

    steps = int(round(horizon / dt))
    q0 = np.zeros(dof) if q_init is None else np.asarray(q_init, float)
    states = np.empty((steps + 1, 2 * dof))
    states[0] = np.concatenate([q0, np.zeros(dof)])
    initial_energy = energy(states[0])
    allowance = ENERGY_TOLERANCE * initial_energy
    previous = initial_energy

    for k in range(steps):
        y = states[k]
        k1 = derivative(y)
        k2 = derivative(y + 0.5 * dt * k1)
        k3 = derivative(y + 0.5 * dt * k2)
        k4 = derivative(y + dt * k3)
        states[k + 1] = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        current = energy(states[k + 1])
        if not np.isfinite(current) or current > previous + allowance:
            logger.error('Energy grew at t=%.6g s', (k + 1) * dt)
            raise StepSizeError(
                'Integration is unstable; use a smaller dt',
                [f'dt {dt}', f'step {k + 1}'],
            )
        previous = current

    q = states[:, :dof]
    return TimeSeries(
        t=np.arange(steps + 1) * dt,
        q=q,
        qdot=states[:, dof:],
        tau=-(q - q_cmd) @ K.T,
    )


@dataclass(frozen=True)
class JointResponse:
    joint: int
    step: float
    overshoot: float
    settling_time: float
    settled: bool
    dominant_frequency: float


@dataclass(frozen=True)
class ResponseMetrics:
    """Step response summary over the stepped joints.

    Attributes:
        overshoot: Largest overshoot, fraction of the step
        settling_time: Time after which every joint stays in its 2% band, s
        dominant_frequency: Oscillation frequency of the largest step, Hz
        settled: False if some joint leaves its band at the horizon
        joints: Per-joint details
    """

    overshoot: float
    settling_time: float
    dominant_frequency: float
    settled: bool
    joints: Tuple[JointResponse, ...] = ()


def _zero_crossing_frequency(t: np.ndarray, error: np.ndarray) -> float:
    sign = np.sign(error)
    index = np.flatnonzero(sign[:-1] * sign[1:] < 0)
    if index.size < 2:
        return 0.0
    e0, e1 = error[index], error[index + 1]
    crossings = t[index] - e0 * (t[index + 1] - t[index]) / (e1 - e0)
    span = crossings[-1] - crossings[0]
    if span <= 0:
        return 0.0
    return (crossings.size - 1) / (2.0 * span)


def _joint_response(
    t: np.ndarray, q: np.ndarray, target: float, joint: int
) -> JointResponse:
    step = target - q[0]
    error = q - target
    overshoot = max(0.0, float(np.max(np.sign(step) * error))) / abs(step)
    outside = np.flatnonzero(np.abs(error) > SETTLING_BAND * abs(step))
    settled = outside.size == 0 or outside[-1] < t.size - 1
    if outside.size == 0:
        settling_time = float(t[0])
    elif settled:
        settling_time = float(t[outside[-1] + 1])
    else:
        settling_time = float(t[-1])
    return JointResponse(
        joint=joint,
        step=float(step),
        overshoot=overshoot,
        settling_time=settling_time,
        settled=settled,
        dominant_frequency=_zero_crossing_frequency(t, error),
    )


def response_metrics(series: TimeSeries, q_cmd: np.ndarray) -> ResponseMetrics:
    """Overshoot, 2% settling time and zero-crossing frequency.

    Joints whose command equals their initial angle are left out. The
    summary takes the largest overshoot and settling time over the stepped
    joints and the frequency of the joint with the largest step.

    Raises:
        DomainError: If the series is empty
    """
    if len(series.t) == 0:
        raise DomainError('Time series is empty', ['t'])
    q_cmd = np.asarray(q_cmd, dtype=float)
    t = np.asarray(series.t)
    q = np.asarray(series.q)
    stepped = [
        joint for joint in range(q.shape[1]) if q_cmd[joint] != q[0, joint]
    ]
    if not stepped:
        return ResponseMetrics(0.0, float(t[0]), 0.0, True)

    joints = tuple(
        _joint_response(t, q[:, joint], float(q_cmd[joint]), joint)
        for joint in stepped
    )
    largest = max(joints, key=lambda item: abs(item.step))
    return ResponseMetrics(
        overshoot=max(item.overshoot for item in joints),
        settling_time=max(item.settling_time for item in joints),
        dominant_frequency=largest.dominant_frequency,
        settled=all(item.settled for item in joints),
        joints=joints,
    )
