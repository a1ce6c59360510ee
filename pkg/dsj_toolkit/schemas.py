"""Configuration document schemas.

The document is written in millimetres and degrees; conversion to SI happens
in :func:`dsj_toolkit.models.validate_config`.
"""

from enum import StrEnum
from typing import Annotated, List, Optional

from pydantic import (
    AfterValidator,
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from dsj_toolkit.exceptions import (
    ConfigError,
    ConfigValidationError,
    UnknownKeyError,
)


def _rectangular(rows: List[List[float]]) -> List[List[float]]:
    lengths = {len(row) for row in rows}
    if not rows or len(lengths) != 1 or 0 in lengths:
        raise ValueError(
            'matrix rows must be non-empty and equal in length, got '
            f'{[len(row) for row in rows]}'
        )
    return rows


Matrix = Annotated[List[List[float]], AfterValidator(_rectangular)]


class GraspMode(StrEnum):
    """How the grasp direction is obtained."""

    FIXED = 'fixed'
    SURFACE_NORMAL = 'surface_normal'


class _Section(BaseModel):
    """Base for every document section; unknown keys are rejected."""

    model_config = ConfigDict(extra='forbid', allow_inf_nan=False)


class SpringsConfig(_Section):
    """Effective linear stiffness of each antagonistic tendon pair."""

    k_p: float = Field(gt=0, description='Position tendon pair, N/m')
    k_s: float = Field(gt=0, description='Stiffness tendon pair, N/m')
    k_j: float = Field(gt=0, description='Joint tendon pair, N/m')


class PulleysConfig(_Section):
    """Pulley radii and the amplification ratio."""

    r_j_mm: float = Field(gt=0, description='Joint pulley radius, mm')
    r_d_mm: float = Field(
        gt=0, description='Differential housing radius, mm'
    )
    r_p_mm: Optional[float] = Field(
        default=None,
        gt=0,
        description='Position pulley radius, mm (defaults to r_d_mm)',
    )
    R_J_mm: Optional[Matrix] = Field(
        default=None, description='Explicit joint radius matrix, mm'
    )
    R_D_mm: Optional[Matrix] = Field(
        default=None, description='Explicit housing radius matrix, mm'
    )
    R_P_mm: Optional[Matrix] = Field(
        default=None, description='Explicit position radius matrix, mm'
    )
    n: Optional[float] = Field(
        default=None,
        gt=0,
        description='Amplification ratio (derived from radii if omitted)',
    )
    coupled: bool = Field(
        default=True,
        description='Lower-triangular tendon routing of a coupled finger',
    )


class BasePoseConfig(_Section):
    """Planar pose of the finger base frame."""

    x_mm: float = Field(default=0.0, description='Base x position, mm')
    y_mm: float = Field(default=0.0, description='Base y position, mm')
    theta_deg: float = Field(default=0.0, description='Base heading, deg')


class FingerConfig(_Section):
    """Planar two-link finger and grasp experiment settings."""

    link_lengths_mm: List[float] = Field(
        default=[50.0, 40.0],
        min_length=2,
        max_length=2,
        description='Proximal and distal link lengths, mm',
    )
    base_pose: BasePoseConfig = Field(
        default_factory=BasePoseConfig, description='Base frame pose'
    )
    q0_deg: List[float] = Field(
        default=[30.0, 45.0],
        min_length=2,
        max_length=2,
        description='Equilibrium joint angles for grasp experiments, deg',
    )
    grasp_mode: GraspMode = Field(
        default=GraspMode.FIXED, description='Grasp direction mode'
    )
    grasp_direction: Optional[List[float]] = Field(
        default=None,
        min_length=2,
        max_length=2,
        description='Unit grasp direction (radial at q0 if omitted)',
    )
    deviation_max_mm: float = Field(
        default=8.0, gt=0, description='Largest grasp deviation, mm'
    )
    deviation_points: int = Field(
        default=17, ge=2, description='Points on the deviation grid'
    )


class DynamicsConfig(_Section):
    """Joint-space dynamics used by the step response experiment."""

    inertia: Matrix = Field(
        default=[[2e-4, 0.0], [0.0, 1e-4]],
        description='Joint inertia matrix, kg m^2',
    )
    damping: Matrix = Field(
        default=[[2.5e-3, 0.0], [0.0, 1.25e-3]],
        description='Joint damping matrix, N m s/rad',
    )
    step_targets_deg: List[float] = Field(
        default=[20.0, 20.0], description='Commanded step per joint, deg'
    )
    horizon_s: float = Field(
        default=4.0, gt=0, description='Simulated horizon, s'
    )
    dt_s: float = Field(default=1e-3, gt=0, description='Time step, s')


class SchedulePoint(_Section):
    """One explicit stiffness schedule sample."""

    q_s_deg: float = Field(description='Spiral joint angle, deg')
    alpha: Optional[float] = Field(
        default=None, description='Fraction of the maximum stiffness'
    )
    matrix: Optional[Matrix] = Field(
        default=None, description='Joint-level target, N m/rad'
    )

    @model_validator(mode='after')
    def check_single_target(self) -> 'SchedulePoint':
        """Require exactly one of alpha or matrix."""
        if (self.alpha is None) == (self.matrix is None):
            raise ValueError('give exactly one of alpha or matrix')
        return self


class ScheduleConfig(_Section):
    """Desired passive stiffness along the spiral joint rotation."""

    alpha_min: float = Field(
        default=0.2, description='Stiffness fraction at q_s_min'
    )
    alpha_max: float = Field(
        default=0.8, description='Stiffness fraction at q_s_max'
    )
    q_s_min_deg: float = Field(
        default=0.0, description='First spiral angle, deg'
    )
    q_s_max_deg: float = Field(
        default=720.0, description='Last spiral angle, deg'
    )
    samples: int = Field(
        default=361, ge=1, description='Samples of the linear schedule'
    )
    points: Optional[List[SchedulePoint]] = Field(
        default=None,
        min_length=1,
        description='Explicit samples; replaces the linear form',
    )
    z_min_mm: float = Field(default=0.0, description='Groove start, mm')
    z_max_mm: float = Field(default=12.0, description='Groove end, mm')
    probe_alphas: List[float] = Field(
        default=[0.2, 0.5, 0.8],
        min_length=1,
        description='Stiffness fractions probed by ellipse/grasp/step',
    )
    ellipse_radius_deg: float = Field(
        default=20.0, gt=0, description='Ellipse deviation radius, deg'
    )
    ellipse_samples: int = Field(
        default=72, ge=2, description='Samples on the deviation circle'
    )

    @field_validator('points')
    @classmethod
    def check_homogeneous(
        cls, v: Optional[List[SchedulePoint]]
    ) -> Optional[List[SchedulePoint]]:
        """Reject schedules mixing alpha and matrix samples."""
        if v and len({p.alpha is None for p in v}) > 1:
            raise ValueError('points must all use alpha or all use matrix')
        return v


class DSJConfig(_Section):
    """Complete design configuration document."""

    springs: SpringsConfig
    pulleys: PulleysConfig
    finger: FingerConfig = Field(default_factory=FingerConfig)
    dynamics: DynamicsConfig = Field(default_factory=DynamicsConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)


def _dotted(loc: tuple) -> str:
    return '.'.join(str(part) for part in loc)


def config_error_from(exc: ValidationError) -> ConfigError:
    """Translate a pydantic validation failure into a toolkit error.

    Args:
        exc: Error raised while validating a configuration document

    Returns:
        UnknownKeyError if any key is unknown, ConfigValidationError otherwise
    """
    unknown = [
        _dotted(err['loc'])
        for err in exc.errors()
        if err['type'] == 'extra_forbidden'
    ]
    if unknown:
        return UnknownKeyError('Unknown configuration keys', unknown)
    return ConfigValidationError(
        'Invalid configuration',
        [f'{_dotted(err["loc"])}: {err["msg"]}' for err in exc.errors()],
    )


def schema_has_path(parts: List[str], model: type = DSJConfig) -> bool:
    """Check that a dotted key path names a field of the schema."""
    if not parts or parts[0] not in model.model_fields:
        return False
    annotation = model.model_fields[parts[0]].annotation
    if len(parts) == 1:
        return True
    if isinstance(annotation, type) and issubclass(annotation, BaseModel):
        return schema_has_path(parts[1:], annotation)
    return False
