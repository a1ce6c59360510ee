"""Domain types and configuration validation.

All lengths are metres and all angles radians once a bundle has been
validated. Array fields are stored as read-only numpy arrays so instances
can be shared freely.
"""

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Any, Optional, Union

import numpy as np
from pydantic import ValidationError

from dsj_toolkit.exceptions import (
    ConfigValidationError,
    DomainError,
    ShapeError,
)
from dsj_toolkit.schemas import DSJConfig, GraspMode, config_error_from

logger = logging.getLogger(__name__)

MM = 1e-3
SYMMETRY_TOLERANCE = 1e-9
PSD_TOLERANCE = 1e-12


def _frozen(
    values: Any, name: str, ndim: Optional[int] = None
) -> np.ndarray:
    try:
        array = np.array(values, dtype=float)
    except ValueError as exc:
        raise ShapeError(
            f'{name} must be a regular array', [str(exc)]
        ) from exc
    if ndim is not None and array.ndim != ndim:
        raise ShapeError(
            f'{name} must have {ndim} dimension(s)', [f'shape {array.shape}']
        )
    if not np.all(np.isfinite(array)):
        raise DomainError(f'{name} must be finite', [name])
    array.setflags(write=False)
    return array


def _square(values: Any, name: str) -> np.ndarray:
    array = _frozen(values, name, ndim=2)
    if array.shape[0] != array.shape[1]:
        raise ShapeError(
            f'{name} must be square', [f'shape {array.shape}']
        )
    return array


def _is_diagonal(matrix: np.ndarray) -> bool:
    return bool(np.all(matrix == np.diag(np.diag(matrix))))


class Frame(StrEnum):
    """Level at which a stiffness matrix is expressed."""

    JOINT = 'joint'
    DIFFERENTIAL = 'differential'
    TASK = 'task'


@dataclass(frozen=True)
class SpringConstants:
    """Effective stiffness of the three antagonistic tendon pairs (N/m)."""

    k_p: float
    k_s: float
    k_j: float

    def __post_init__(self):
        bad = [
            name
            for name in ('k_p', 'k_s', 'k_j')
            if not (math.isfinite(getattr(self, name)))
            or getattr(self, name) <= 0
        ]
        if bad:
            raise DomainError(
                'Spring constants must be positive and finite', bad
            )

    def scaled(self, factor: float) -> 'SpringConstants':
        """Return the constants multiplied by a common factor."""
        return SpringConstants(
            self.k_p * factor, self.k_s * factor, self.k_j * factor
        )


@dataclass(frozen=True)
class PulleyGeometry:
    """Radius matrices of the transmission and the amplification ratio.

    Attributes:
        R_J: Joint radius coupling matrix, m (lower-triangular when coupled)
        R_D: Differential housing radius matrix, m (diagonal)
        R_P: Position pulley radius matrix, m (diagonal)
        n: Ratio of housing radius to joint radius
    """

    R_J: np.ndarray
    R_D: np.ndarray
    R_P: np.ndarray
    n: float

    def __post_init__(self):
        for name in ('R_J', 'R_D', 'R_P'):
            object.__setattr__(self, name, _square(getattr(self, name), name))
        shapes = {self.R_J.shape, self.R_D.shape, self.R_P.shape}
        if len(shapes) != 1:
            raise ShapeError(
                'Radius matrices must share one shape',
                [str(shape) for shape in sorted(shapes)],
            )

        errors = []
        for name in ('R_D', 'R_P'):
            matrix = getattr(self, name)
            if not _is_diagonal(matrix):
                errors.append(f'{name} must be diagonal')
            elif np.any(np.diag(matrix) <= 0):
                errors.append(f'{name} must have positive entries')
        if np.any(np.diag(self.R_J) <= 0):
            errors.append('R_J must have a positive diagonal')
        if not (math.isfinite(self.n) and self.n > 0):
            errors.append('n must be positive')
        if errors:
            raise DomainError('Invalid pulley geometry', errors)

    @property
    def dof(self) -> int:
        """Number of joints."""
        return self.R_J.shape[0]

    @property
    def differential_map(self) -> np.ndarray:
        """R_D⁻¹ R_J: spiral joint rotation per unit joint rotation."""
        return np.linalg.solve(self.R_D, self.R_J)

    @classmethod
    def from_radii(
        cls,
        r_j: float,
        r_d: float,
        r_p: Optional[float] = None,
        n: Optional[float] = None,
        dof: int = 2,
        coupled: bool = True,
    ) -> 'PulleyGeometry':
        """Build the matrices of a finger with uniform pulley radii.

        A coupled finger routes every distal tendon over the proximal
        joints, which makes R_J lower-triangular with all entries r_j.

        Args:
            r_j: Joint pulley radius, m
            r_d: Differential housing radius, m
            r_p: Position pulley radius, m (defaults to r_d)
            n: Amplification ratio (defaults to r_d / r_j)
            dof: Number of joints
            coupled: Use the lower-triangular routing

        Returns:
            Validated geometry
        """
        eye = np.eye(dof)
        R_J = r_j * (np.tril(np.ones((dof, dof))) if coupled else eye)
        return cls(
            R_J=R_J,
            R_D=r_d * eye,
            R_P=(r_d if r_p is None else r_p) * eye,
            n=r_d / r_j if n is None else n,
        )


@dataclass(frozen=True)
class StiffnessMatrix:
    """Symmetric stiffness matrix tagged with the level it belongs to.

    Joint and differential level entries are N·m/rad; task level entries
    are N/m. Positive semidefiniteness is checked by the operations whose
    contract needs it.
    """

    entries: np.ndarray
    frame: Frame = Frame.JOINT

    def __post_init__(self):
        entries = _square(self.entries, 'stiffness matrix')
        scale = max(float(np.linalg.norm(entries)), 1.0)
        asymmetry = float(np.linalg.norm(entries - entries.T))
        if asymmetry > SYMMETRY_TOLERANCE * scale:
            raise DomainError(
                'Stiffness matrix must be symmetric',
                [f'asymmetry {asymmetry:.3g}'],
            )
        object.__setattr__(self, 'entries', entries)
        object.__setattr__(self, 'frame', Frame(self.frame))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries))

    @property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues in ascending order."""
        return np.linalg.eigvalsh(self.entries)

    @property
    def is_psd(self) -> bool:
        """Eigenvalues ≥ −1e-12·trace."""
        floor = -PSD_TOLERANCE * max(abs(self.trace), np.finfo(float).tiny)
        return bool(self.eigenvalues[0] >= floor)

    def scaled(self, factor: float) -> 'StiffnessMatrix':
        return StiffnessMatrix(self.entries * factor, self.frame)


@dataclass(frozen=True)
class TendonState:
    """Tendon length changes from joint rotation and from the motors (m)."""

    L_J: np.ndarray
    L_m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'L_J', _frozen(self.L_J, 'L_J', ndim=1))
        object.__setattr__(self, 'L_m', _frozen(self.L_m, 'L_m', ndim=1))
        if self.L_J.shape != self.L_m.shape:
            raise ShapeError(
                'L_J and L_m must have equal length',
                [f'{self.L_J.shape} != {self.L_m.shape}'],
            )


@dataclass(frozen=True)
class JointState:
    """Joint angles (rad) and velocities (rad/s); velocities default to 0."""

    q: np.ndarray
    qdot: Optional[np.ndarray] = None

    def __post_init__(self):
        q = _frozen(self.q, 'q', ndim=1)
        qdot = np.zeros_like(q) if self.qdot is None else self.qdot
        qdot = _frozen(qdot, 'qdot', ndim=1)
        if q.shape != qdot.shape:
            raise ShapeError(
                'q and qdot must have equal length',
                [f'{q.shape} != {qdot.shape}'],
            )
        object.__setattr__(self, 'q', q)
        object.__setattr__(self, 'qdot', qdot)


@dataclass(frozen=True)
class StiffnessSchedule:
    """Desired passive stiffness sampled along the spiral joint angle.

    Each sample carries either a fraction alpha of K_max or an explicit
    joint-level target matrix. Fractions outside (0, 1) are accepted here
    and reported as infeasible by the solver, at their q_s.
    """

    q_s: np.ndarray
    alphas: Optional[np.ndarray] = None
    matrices: Optional[np.ndarray] = None

    def __post_init__(self):
        q_s = _frozen(self.q_s, 'q_s', ndim=1)
        if q_s.size == 0:
            raise DomainError('Schedule needs at least one sample', ['q_s'])
        if np.any(np.diff(q_s) <= 0):
            raise DomainError('q_s must be strictly increasing', ['q_s'])
        if (self.alphas is None) == (self.matrices is None):
            raise DomainError(
                'Schedule needs exactly one of alphas or matrices',
                ['alphas', 'matrices'],
            )
        object.__setattr__(self, 'q_s', q_s)

        if self.alphas is not None:
            alphas = _frozen(self.alphas, 'alphas', ndim=1)
            if alphas.shape != q_s.shape:
                raise ShapeError(
                    'One alpha per sample is required',
                    [f'{alphas.shape} != {q_s.shape}'],
                )
            object.__setattr__(self, 'alphas', alphas)
        else:
            matrices = _frozen(self.matrices, 'matrices', ndim=3)
            if (
                matrices.shape[0] != q_s.size
                or matrices.shape[1] != matrices.shape[2]
            ):
                raise ShapeError(
                    'One square matrix per sample is required',
                    [f'shape {matrices.shape}'],
                )
            object.__setattr__(self, 'matrices', matrices)

    def __len__(self) -> int:
        return self.q_s.size

    @property
    def is_fractional(self) -> bool:
        return self.alphas is not None

    def target(self, index: int, K_max: StiffnessMatrix) -> StiffnessMatrix:
        """Joint-level target of one sample."""
        if self.alphas is not None:
            return K_max.scaled(float(self.alphas[index]))
        return StiffnessMatrix(self.matrices[index], Frame.JOINT)

    @classmethod
    def linear(
        cls,
        alpha_min: float,
        alpha_max: float,
        q_s_min: float,
        q_s_max: float,
        samples: int,
    ) -> 'StiffnessSchedule':
        """Fraction varying linearly over an evenly spaced q_s grid."""
        return cls(
            q_s=np.linspace(q_s_min, q_s_max, samples),
            alphas=np.linspace(alpha_min, alpha_max, samples),
        )


@dataclass(frozen=True)
class BasePose:
    """Planar pose of the finger base: position (m) and heading (rad)."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0


@dataclass(frozen=True)
class FingerGeometry:
    """Planar two-link finger."""

    link_lengths: np.ndarray
    base_pose: BasePose = field(default_factory=BasePose)

    def __post_init__(self):
        lengths = _frozen(self.link_lengths, 'link_lengths', ndim=1)
        if lengths.size != 2:
            raise ShapeError(
                'Finger geometry is planar two-link',
                [f'{lengths.size} links'],
            )
        if np.any(lengths <= 0):
            raise DomainError(
                'Link lengths must be positive', ['link_lengths']
            )
        object.__setattr__(self, 'link_lengths', lengths)


@dataclass(frozen=True)
class DynamicsParams:
    """Joint-space inertia (kg·m²) and damping (N·m·s/rad)."""

    inertia: np.ndarray
    damping: np.ndarray

    def __post_init__(self):
        inertia = _square(self.inertia, 'inertia')
        damping = _square(self.damping, 'damping')
        if inertia.shape != damping.shape:
            raise ShapeError(
                'Inertia and damping must share one shape',
                [f'{inertia.shape} != {damping.shape}'],
            )
        errors = []
        if not np.allclose(inertia, inertia.T, rtol=SYMMETRY_TOLERANCE):
            errors.append('inertia must be symmetric')
        elif np.linalg.eigvalsh(inertia)[0] <= 0:
            errors.append('inertia must be positive definite')
        if not np.allclose(damping, damping.T, rtol=SYMMETRY_TOLERANCE):
            errors.append('damping must be symmetric')
        elif np.linalg.eigvalsh(damping)[0] < -PSD_TOLERANCE * max(
            np.trace(damping), 1.0
        ):
            errors.append('damping must be positive semidefinite')
        if errors:
            raise DomainError('Invalid dynamics parameters', errors)
        object.__setattr__(self, 'inertia', inertia)
        object.__setattr__(self, 'damping', damping)


@dataclass(frozen=True)
class TaskState:
    """Fingertip position (m), grasp deviation (m) and task force (N)."""

    x: np.ndarray
    delta_p: float
    F_p: float

    def __post_init__(self):
        object.__setattr__(self, 'x', _frozen(self.x, 'x', ndim=1))
        bad = [
            name
            for name in ('delta_p', 'F_p')
            if not math.isfinite(getattr(self, name))
        ]
        if bad:
            raise DomainError('Task state must be finite', bad)


@dataclass(frozen=True)
class ExperimentPlan:
    """Settings of the validation experiments, in SI units."""

    q0: np.ndarray
    grasp_mode: GraspMode
    grasp_direction: Optional[np.ndarray]
    deviations: np.ndarray
    step_targets: np.ndarray
    horizon: float
    dt: float
    z_range: tuple[float, float]
    probe_alphas: np.ndarray
    ellipse_radius: float
    ellipse_samples: int

    def __post_init__(self):
        for name in ('q0', 'deviations', 'step_targets', 'probe_alphas'):
            object.__setattr__(
                self, name, _frozen(getattr(self, name), name, ndim=1)
            )
        if self.grasp_direction is not None:
            object.__setattr__(
                self,
                'grasp_direction',
                _frozen(self.grasp_direction, 'grasp_direction', ndim=1),
            )
        object.__setattr__(self, 'grasp_mode', GraspMode(self.grasp_mode))
        object.__setattr__(self, 'z_range', tuple(self.z_range))


@dataclass(frozen=True)
class ModelBundle:
    """Everything a pipeline needs, validated and in SI units."""

    springs: SpringConstants
    pulleys: PulleyGeometry
    finger: FingerGeometry
    dynamics: DynamicsParams
    schedule: StiffnessSchedule
    plan: ExperimentPlan

    def to_dict(self) -> dict:
        """Plain SI document; floats survive a JSON round trip exactly."""
        schedule = {'q_s': self.schedule.q_s.tolist()}
        if self.schedule.alphas is not None:
            schedule['alphas'] = self.schedule.alphas.tolist()
        else:
            schedule['matrices'] = self.schedule.matrices.tolist()
        plan = self.plan
        return {
            'springs': {
                'k_p': self.springs.k_p,
                'k_s': self.springs.k_s,
                'k_j': self.springs.k_j,
            },
            'pulleys': {
                'R_J': self.pulleys.R_J.tolist(),
                'R_D': self.pulleys.R_D.tolist(),
                'R_P': self.pulleys.R_P.tolist(),
                'n': self.pulleys.n,
            },
            'finger': {
                'link_lengths': self.finger.link_lengths.tolist(),
                'base_pose': {
                    'x': self.finger.base_pose.x,
                    'y': self.finger.base_pose.y,
                    'theta': self.finger.base_pose.theta,
                },
            },
            'dynamics': {
                'inertia': self.dynamics.inertia.tolist(),
                'damping': self.dynamics.damping.tolist(),
            },
            'schedule': schedule,
            'plan': {
                'q0': plan.q0.tolist(),
                'grasp_mode': str(plan.grasp_mode),
                'grasp_direction': (
                    None
                    if plan.grasp_direction is None
                    else plan.grasp_direction.tolist()
                ),
                'deviations': plan.deviations.tolist(),
                'step_targets': plan.step_targets.tolist(),
                'horizon': plan.horizon,
                'dt': plan.dt,
                'z_range': list(plan.z_range),
                'probe_alphas': plan.probe_alphas.tolist(),
                'ellipse_radius': plan.ellipse_radius,
                'ellipse_samples': plan.ellipse_samples,
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> 'ModelBundle':
        """Inverse of :meth:`to_dict`."""
        try:
            finger = data['finger']
            return cls(
                springs=SpringConstants(**data['springs']),
                pulleys=PulleyGeometry(**data['pulleys']),
                finger=FingerGeometry(
                    link_lengths=finger['link_lengths'],
                    base_pose=BasePose(**finger['base_pose']),
                ),
                dynamics=DynamicsParams(**data['dynamics']),
                schedule=StiffnessSchedule(**data['schedule']),
                plan=ExperimentPlan(**data['plan']),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigValidationError(
                'Malformed model document', [str(exc)]
            ) from exc


def _mm_matrix(
    values: Optional[list], fallback: np.ndarray, name: str
) -> np.ndarray:
    if values is None:
        return fallback
    return _frozen(values, name, ndim=2) * MM


def _pulleys(config: DSJConfig, dof: int) -> PulleyGeometry:
    section = config.pulleys
    r_j = section.r_j_mm * MM
    r_d = section.r_d_mm * MM
    r_p = r_d if section.r_p_mm is None else section.r_p_mm * MM
    eye = np.eye(dof)
    default = PulleyGeometry.from_radii(
        r_j, r_d, r_p, n=1.0, dof=dof, coupled=section.coupled
    )
    R_J = _mm_matrix(section.R_J_mm, default.R_J, 'R_J_mm')
    R_D = _mm_matrix(section.R_D_mm, r_d * eye, 'R_D_mm')
    R_P = _mm_matrix(section.R_P_mm, r_p * eye, 'R_P_mm')
    for name, matrix in (('R_J', R_J), ('R_D', R_D), ('R_P', R_P)):
        if matrix.shape != (dof, dof):
            raise ShapeError(
                f'{name} must be {dof}x{dof}', [f'shape {matrix.shape}']
            )

    n = section.n
    if n is None:
        ratios = np.diag(R_D) / np.diag(R_J)
        if not np.allclose(ratios, ratios[0], rtol=1e-12, atol=0):
            raise ConfigValidationError(
                'pulleys.n must be given when radius ratios differ',
                [f'ratios {ratios.tolist()}'],
            )
        n = float(ratios[0])
    return PulleyGeometry(R_J=R_J, R_D=R_D, R_P=R_P, n=n)


def _schedule(config: DSJConfig) -> StiffnessSchedule:
    section = config.schedule
    if section.points is None:
        return StiffnessSchedule.linear(
            section.alpha_min,
            section.alpha_max,
            math.radians(section.q_s_min_deg),
            math.radians(section.q_s_max_deg),
            section.samples,
        )
    q_s = [math.radians(point.q_s_deg) for point in section.points]
    if section.points[0].alpha is not None:
        return StiffnessSchedule(
            q_s=q_s, alphas=[point.alpha for point in section.points]
        )
    return StiffnessSchedule(
        q_s=q_s, matrices=[point.matrix for point in section.points]
    )


def _plan(config: DSJConfig) -> ExperimentPlan:
    finger = config.finger
    dynamics = config.dynamics
    schedule = config.schedule
    return ExperimentPlan(
        q0=[math.radians(value) for value in finger.q0_deg],
        grasp_mode=finger.grasp_mode,
        grasp_direction=finger.grasp_direction,
        deviations=np.linspace(
            0.0, finger.deviation_max_mm * MM, finger.deviation_points
        ),
        step_targets=[
            math.radians(value) for value in dynamics.step_targets_deg
        ],
        horizon=dynamics.horizon_s,
        dt=dynamics.dt_s,
        z_range=(schedule.z_min_mm * MM, schedule.z_max_mm * MM),
        probe_alphas=schedule.probe_alphas,
        ellipse_radius=math.radians(schedule.ellipse_radius_deg),
        ellipse_samples=schedule.ellipse_samples,
    )


def validate_config(raw: Union[DSJConfig, Mapping]) -> ModelBundle:
    """Validate a configuration document and convert it to SI units.

    Args:
        raw: Parsed document or an already schema-checked DSJConfig

    Returns:
        Validated model bundle

    Raises:
        UnknownKeyError: If the document contains unknown keys
        ConfigValidationError: If values violate the schema
        ModelValidationError: If a domain invariant does not hold
    """
    if isinstance(raw, DSJConfig):
        config = raw
    else:
        try:
            config = DSJConfig.model_validate(raw)
        except ValidationError as exc:
            raise config_error_from(exc) from exc

    dof = len(config.finger.link_lengths_mm)
    pose = config.finger.base_pose
    bundle = ModelBundle(
        springs=SpringConstants(
            config.springs.k_p, config.springs.k_s, config.springs.k_j
        ),
        pulleys=_pulleys(config, dof),
        finger=FingerGeometry(
            link_lengths=[
                value * MM for value in config.finger.link_lengths_mm
            ],
            base_pose=BasePose(
                x=pose.x_mm * MM,
                y=pose.y_mm * MM,
                theta=math.radians(pose.theta_deg),
            ),
        ),
        dynamics=DynamicsParams(
            inertia=config.dynamics.inertia,
            damping=config.dynamics.damping,
        ),
        schedule=_schedule(config),
        plan=_plan(config),
    )
    if bundle.dynamics.inertia.shape[0] != dof:
        raise ShapeError(
            'Dynamics matrices must match the finger',
            [f'{dof} joints'],
        )
    logger.debug(
        'Validated bundle: n=%.6g, %d schedule samples',
        bundle.pulleys.n,
        len(bundle.schedule),
    )
    return bundle
