"""Spiral joint synthesis from a stiffness schedule.

The inverse problem runs per schedule sample: the target passive
stiffness gives the required spiral path stiffness, which is then mapped
back to one radius per spiral joint. Grooves are emitted as mirrored
polylines so both antagonistic tendons see the same moment arm.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import StrEnum
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from dsj_toolkit import storage
from dsj_toolkit.exceptions import (
    DomainError,
    GridError,
    InfeasibleTargetError,
    ProfileStateError,
    ShapeError,
    StructureError,
)
from dsj_toolkit.models import (
    Frame,
    PulleyGeometry,
    SpringConstants,
    StiffnessMatrix,
    StiffnessSchedule,
)
from dsj_toolkit.stiffness import (
    compose_passive,
    joint_path_stiffness,
    k_max,
    position_path_stiffness,
    required_spiral_stiffness,
    spiral_stiffness_from_radii,
)

logger = logging.getLogger(__name__)

STRUCTURE_TOLERANCE = 1e-6
POLYLINE_SPACING_DEG = 1.0
PROFILE_COLUMNS = (
    'q_s_rad',
    'theta_deg',
    'r_mm',
    'z_mm',
    'joint_index',
    'groove_side',
)


class ExportFormat(StrEnum):
    CSV = 'csv'
    JSON = 'json'


@dataclass(frozen=True)
class GroovePolyline:
    """Groove centerline in cylindrical coordinates.

    Attributes:
        joint_index: Spiral joint the groove belongs to
        side: 0 for the primary groove, 1 for its mirror
        q_s: Spiral angle of every point, rad
        theta: Angular coordinate, rad (negated on the mirrored side)
        r: Radius, m
        z: Elevation, m
    """

    joint_index: int
    side: int
    q_s: np.ndarray
    theta: np.ndarray
    r: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class SpiralProfile:
    """Sampled spiral radii per joint, groove elevation and groove pairs.

    Radii are stored with shape (samples, joints). Between samples the
    radius is linear in q_s; outside the grid it is extrapolated with the
    end segments.
    """

    q_s: np.ndarray
    r_s: np.ndarray
    z_s: Optional[np.ndarray] = None
    grooves: Tuple[GroovePolyline, ...] = ()
    warnings: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        q_s = np.array(self.q_s, dtype=float)
        r_s = np.array(self.r_s, dtype=float)
        if r_s.ndim != 2 or r_s.shape[0] != q_s.size:
            raise ShapeError(
                'Radii must have shape (samples, joints)',
                [f'q_s {q_s.shape}, r_s {r_s.shape}'],
            )
        if np.any(np.diff(q_s) <= 0):
            raise GridError('q_s must be strictly increasing', ['q_s'])
        if np.any(r_s < 0):
            raise DomainError('Spiral radii must be non-negative', ['r_s'])
        q_s.setflags(write=False)
        r_s.setflags(write=False)
        object.__setattr__(self, 'q_s', q_s)
        object.__setattr__(self, 'r_s', r_s)
        if self.z_s is not None:
            z_s = np.array(self.z_s, dtype=float)
            if z_s.shape != q_s.shape:
                raise ShapeError(
                    'One elevation per sample is required',
                    [f'{z_s.shape} != {q_s.shape}'],
                )
            z_s.setflags(write=False)
            object.__setattr__(self, 'z_s', z_s)
        object.__setattr__(self, 'grooves', tuple(self.grooves))
        object.__setattr__(
            self,
            '_knots',
            cumulative_trapezoid(r_s, q_s, axis=0, initial=0)
            if q_s.size > 1
            else np.zeros_like(r_s),
        )
        object.__setattr__(self, 'warnings', tuple(self.warnings))

    @property
    def joints(self) -> int:
        return self.r_s.shape[1]

    @property
    def has_grooves(self) -> bool:
        return self.z_s is not None and bool(self.grooves)

    def _segments(self, angles: np.ndarray) -> tuple:
        if self.q_s.size < 2:
            raise GridError(
                'A radius law needs at least two samples',
                [f'{self.q_s.size} samples'],
            )
        k = np.clip(
            np.searchsorted(self.q_s, angles, side='right') - 1,
            0,
            self.q_s.size - 2,
        )
        joint = np.arange(self.joints)
        width = self.q_s[k + 1] - self.q_s[k]
        base = self.r_s[k, joint]
        slope = (self.r_s[k + 1, joint] - base) / width
        return k, base, slope

    def radius(self, angles: np.ndarray) -> np.ndarray:
        """Radius of every joint at its own spiral angle, m."""
        angles = np.asarray(angles, dtype=float)
        k, base, slope = self._segments(angles)
        return base + slope * (angles - self.q_s[k])

    def slope(self, angles: np.ndarray) -> np.ndarray:
        """Radius slope dr/dq_s of every joint, m/rad."""
        _, _, slope = self._segments(np.asarray(angles, dtype=float))
        return slope

    def _segment_wrap(
        self, k: np.ndarray, start: np.ndarray, stop: np.ndarray
    ) -> np.ndarray:
        joint = np.arange(self.joints)
        base = self.r_s[k, joint]
        width = self.q_s[k + 1] - self.q_s[k]
        slope = (self.r_s[k + 1, joint] - base) / width
        middle = 0.5 * (start + stop) - self.q_s[k]
        return (stop - start) * (base + slope * middle)

    def wrap(self, start: np.ndarray, stop: np.ndarray) -> np.ndarray:
        """Wrapped length ∫ r dq_s of every joint between two angles, m.

        Partial segments are integrated from their own end points and only
        whole segments use the cumulative knots, so a short span next to a
        sample keeps full relative precision.
        """
        start = np.asarray(start, dtype=float)
        stop = np.asarray(stop, dtype=float)
        k_start, _, _ = self._segments(start)
        k_stop, _, _ = self._segments(stop)
        joint = np.arange(self.joints)
        forward = k_stop > k_start
        edge_start = np.where(
            forward, self.q_s[k_start + 1], self.q_s[k_start]
        )
        edge_stop = np.where(forward, self.q_s[k_stop], self.q_s[k_stop + 1])
        whole = np.where(
            forward,
            self._knots[k_stop, joint] - self._knots[k_start + 1, joint],
            self._knots[k_stop + 1, joint] - self._knots[k_start, joint],
        )
        crossing = (
            self._segment_wrap(k_start, start, edge_start)
            + whole
            + self._segment_wrap(k_stop, edge_stop, stop)
        )
        return np.where(
            k_start == k_stop,
            self._segment_wrap(k_start, start, stop),
            crossing,
        )

    def radius_at(self, q_values: np.ndarray) -> np.ndarray:
        """Radii of all joints at shared spiral angles, shape (M, joints)."""
        q_values = np.atleast_1d(np.asarray(q_values, dtype=float))
        return np.stack(
            [self.radius(np.full(self.joints, q)) for q in q_values]
        )


@dataclass(frozen=True)
class AssumptionReport:
    """Slope ratios of the profile and the error they induce.

    The stiffness model takes the wrapping rate dL/dq_s to be the radius.
    A slope ratio ρ makes the true rate larger by sqrt(1 + ρ²), so the
    pass/fail flags compare sqrt(1 + ρ²) − 1 and the arc length gap with
    the threshold.
    """

    max_slope_ratio_r: float
    max_slope_ratio_z: float
    arc_length_rel_error: float
    threshold: float

    @property
    def slope_error_r(self) -> float:
        return math.sqrt(1.0 + self.max_slope_ratio_r**2) - 1.0

    @property
    def slope_error_z(self) -> float:
        return math.sqrt(1.0 + self.max_slope_ratio_z**2) - 1.0

    @property
    def passed_r(self) -> bool:
        return self.slope_error_r <= self.threshold

    @property
    def passed_z(self) -> bool:
        return self.slope_error_z <= self.threshold

    @property
    def passed_arc(self) -> bool:
        return self.arc_length_rel_error <= self.threshold

    @property
    def passed(self) -> bool:
        return self.passed_r and self.passed_z and self.passed_arc

    def to_dict(self) -> dict:
        return {
            'max_slope_ratio_r': self.max_slope_ratio_r,
            'max_slope_ratio_z': self.max_slope_ratio_z,
            'arc_length_rel_error': self.arc_length_rel_error,
            'slope_error_r': self.slope_error_r,
            'slope_error_z': self.slope_error_z,
            'threshold': self.threshold,
            'passed_r': self.passed_r,
            'passed_z': self.passed_z,
            'passed_arc': self.passed_arc,
            'passed': self.passed,
        }


@dataclass(frozen=True)
class ArcLength:
    """Cumulative groove length per joint, exact and approximated (m)."""

    q_s: np.ndarray
    exact: np.ndarray
    approximate: np.ndarray

    @property
    def relative_gap(self) -> np.ndarray:
        """(exact − approximate) / approximate at the grid end, per joint."""
        total = self.approximate[-1]
        gap = self.exact[-1] - total
        return np.divide(
            gap, total, out=np.zeros_like(gap), where=total > 0
        )


def _require_grid(profile: SpiralProfile, minimum: int = 3) -> None:
    if profile.q_s.size < minimum:
        raise GridError(
            f'Profile needs at least {minimum} samples',
            [f'{profile.q_s.size} samples'],
        )


def _require_elevation(profile: SpiralProfile) -> np.ndarray:
    if profile.z_s is None:
        raise ProfileStateError(
            'Groove elevation is not set; generate the groove first'
        )
    return profile.z_s


def _radii_from_spiral_stiffness(
    K_S: StiffnessMatrix,
    pulleys: PulleyGeometry,
    springs: SpringConstants,
    q_s: float,
    warnings: list,
) -> np.ndarray:
    """Invert K_S = k_s Aᵀ R_S² A with A = R_D⁻¹ R_J for the radii."""
    A = pulleys.differential_map
    left = np.linalg.solve(A.T, K_S.entries)
    M = np.linalg.solve(A.T, left.T).T / springs.k_s
    M = 0.5 * (M + M.T)

    diagonal = np.diag(M).copy()
    scale = float(np.max(np.abs(diagonal))) or 1.0
    off_diagonal = M - np.diag(diagonal)
    residual = float(np.max(np.abs(off_diagonal))) / scale
    if residual > STRUCTURE_TOLERANCE:
        logger.warning(
            'Target at q_s=%.6g is not realizable by spiral radii', q_s
        )
        raise StructureError(
            'Spiral stiffness does not match the spiral structure',
            residual,
            q_s,
        )
    if residual > 0:
        logger.debug(
            'Projected off-diagonal residual %.3g at q_s=%.6g', residual, q_s
        )
    if np.any(diagonal < -STRUCTURE_TOLERANCE * scale):
        raise StructureError(
            'Spiral stiffness needs a negative squared radius',
            float(-diagonal.min()) / scale,
            q_s,
        )

    diagonal = np.clip(diagonal, 0.0, None)
    for joint in np.flatnonzero(diagonal <= STRUCTURE_TOLERANCE * scale):
        diagonal[joint] = 0.0
        message = f'zero spiral radius on joint {joint} at q_s={q_s:.6g}'
        warnings.append(message)
        logger.warning(message)
    return np.sqrt(diagonal)


def solve_spiral_radii(
    schedule: StiffnessSchedule,
    pulleys: PulleyGeometry,
    springs: SpringConstants,
) -> SpiralProfile:
    """Spiral radii that realize a stiffness schedule.

    Args:
        schedule: Target passive stiffness along q_s
        pulleys: Transmission geometry
        springs: Tendon pair stiffness

    Returns:
        Profile with radii set and no groove

    Raises:
        InfeasibleTargetError: If a target is outside (0, K_max)
        StructureError: If a target cannot be realized by spiral radii
    """
    K_upper = k_max(pulleys, springs)
    radii = []
    warnings: list = []
    for index, q_s in enumerate(schedule.q_s):
        target = schedule.target(index, K_upper)
        try:
            K_S = required_spiral_stiffness(
                target, pulleys, springs, q_s=float(q_s)
            )
        except InfeasibleTargetError:
            logger.error('Infeasible stiffness target at q_s=%.6g', q_s)
            raise
        radii.append(
            _radii_from_spiral_stiffness(
                K_S, pulleys, springs, float(q_s), warnings
            )
        )
    logger.debug('Solved %d schedule samples', len(radii))
    return SpiralProfile(
        q_s=schedule.q_s, r_s=np.array(radii), warnings=tuple(warnings)
    )


def passive_stiffness_along(
    profile: SpiralProfile,
    pulleys: PulleyGeometry,
    springs: SpringConstants,
) -> np.ndarray:
    """Passive stiffness at every profile sample, shape (N, dof, dof)."""
    K_P_d = position_path_stiffness(pulleys, springs, Frame.DIFFERENTIAL)
    K_J_j = joint_path_stiffness(pulleys, springs)
    scale = pulleys.n**2
    result = []
    for radii in profile.r_s:
        K_S_j = spiral_stiffness_from_radii(radii, pulleys, springs)
        breakdown = compose_passive(
            K_P_d, K_S_j.entries / scale, K_J_j, pulleys.n
        )
        result.append(breakdown.K_passive.entries)
    return np.array(result)


def generate_groove(
    profile: SpiralProfile, z_range: Tuple[float, float]
) -> SpiralProfile:
    """Add the groove elevation and the mirrored groove polylines.

    The elevation is linear in q_s from z_lo to z_hi. Polylines are
    resampled at no more than 1° spacing; the mirrored groove reuses the
    r and z arrays and negates θ.

    Args:
        profile: Profile with radii solved
        z_range: (z_lo, z_hi), m

    Returns:
        New profile with z_s and grooves set

    Raises:
        ProfileStateError: If the radii are unset
        DomainError: If z_hi is not above z_lo
    """
    if profile.q_s.size == 0 or profile.r_s.size == 0:
        raise ProfileStateError('Spiral radii are not set')
    _require_grid(profile, minimum=2)
    z_lo, z_hi = (float(value) for value in z_range)
    if not z_hi > z_lo:
        raise DomainError(
            'Groove turns need z_hi above z_lo', [f'z_range {z_range}']
        )

    q_lo, q_hi = float(profile.q_s[0]), float(profile.q_s[-1])
    span = q_hi - q_lo

    def elevation(q):
        return z_lo + (z_hi - z_lo) * (q - q_lo) / span

    points = math.ceil(math.degrees(span) / POLYLINE_SPACING_DEG - 1e-9) + 1
    q_line = np.linspace(q_lo, q_hi, points)
    r_line = profile.radius_at(q_line)
    z_line = elevation(q_line)
    z_line.setflags(write=False)

    grooves = []
    for joint in range(profile.joints):
        r = np.ascontiguousarray(r_line[:, joint])
        r.setflags(write=False)
        theta = q_line.copy()
        grooves.append(GroovePolyline(joint, 0, q_line, theta, r, z_line))
        grooves.append(GroovePolyline(joint, 1, q_line, -theta, r, z_line))

    logger.debug('Generated %d grooves of %d points', len(grooves), points)
    return replace(profile, z_s=elevation(profile.q_s), grooves=grooves)


def groove_arc_length(profile: SpiralProfile) -> ArcLength:
    """Cumulative tendon length wrapped on each groove.

    The exact value integrates sqrt(r'² + r² + z'²); the approximation
    integrates r, which is what the stiffness model uses.

    Raises:
        GridError: If the profile has fewer than 3 samples
        ProfileStateError: If the groove elevation is unset
    """
    _require_grid(profile)
    z_s = _require_elevation(profile)
    dr = np.gradient(profile.r_s, profile.q_s, axis=0)
    dz = np.gradient(z_s, profile.q_s)[:, np.newaxis]
    integrand = np.sqrt(dr**2 + profile.r_s**2 + dz**2)
    return ArcLength(
        q_s=profile.q_s,
        exact=cumulative_trapezoid(
            integrand, profile.q_s, axis=0, initial=0
        ),
        approximate=cumulative_trapezoid(
            profile.r_s, profile.q_s, axis=0, initial=0
        ),
    )


def _max_ratio(numerator: np.ndarray, radius: np.ndarray) -> float:
    numerator = np.abs(numerator)
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = np.where(
            radius > 0,
            numerator / radius,
            np.where(numerator > 0, np.inf, 0.0),
        )
    return float(np.max(ratio))


def validate_assumptions(
    profile: SpiralProfile, threshold: float = 0.05
) -> AssumptionReport:
    """Check that the radius and elevation slopes are small.

    Args:
        profile: Profile with grooves generated
        threshold: Largest admissible induced error

    Returns:
        Report with raw slope ratios and pass/fail flags

    Raises:
        GridError: If the profile has fewer than 3 samples
        ProfileStateError: If the groove elevation is unset
    """
    _require_grid(profile)
    z_s = _require_elevation(profile)
    dr = np.gradient(profile.r_s, profile.q_s, axis=0)
    dz = np.gradient(z_s, profile.q_s)[:, np.newaxis]
    arc = groove_arc_length(profile)
    report = AssumptionReport(
        max_slope_ratio_r=_max_ratio(dr, profile.r_s),
        max_slope_ratio_z=_max_ratio(
            np.broadcast_to(dz, profile.r_s.shape), profile.r_s
        ),
        arc_length_rel_error=float(np.max(np.abs(arc.relative_gap))),
        threshold=threshold,
    )
    if not report.passed:
        logger.warning(
            'Profile slopes exceed threshold %.3g: r %.3g, z %.3g, arc %.3g',
            threshold,
            report.max_slope_ratio_r,
            report.max_slope_ratio_z,
            report.arc_length_rel_error,
        )
    return report


def profile_table(profile: SpiralProfile) -> storage.Table:
    """Groove points ordered by joint, then side, then point.

    Raises:
        GridError: If the profile is empty
        ProfileStateError: If the grooves are not generated
    """
    _require_grid(profile, minimum=1)
    if not profile.has_grooves:
        raise ProfileStateError('Grooves are not generated')
    rows = []
    for groove in sorted(
        profile.grooves, key=lambda g: (g.joint_index, g.side)
    ):
        for q_s, theta, r, z in zip(
            groove.q_s, groove.theta, groove.r, groove.z
        ):
            rows.append((
                float(q_s),
                math.degrees(theta),
                float(r) * 1e3,
                float(z) * 1e3,
                groove.joint_index,
                groove.side,
            ))
    return storage.Table(PROFILE_COLUMNS, rows)


def profile_document(profile: SpiralProfile) -> dict:
    """SI polyline document of a grooved profile."""
    _require_grid(profile, minimum=1)
    if not profile.has_grooves:
        raise ProfileStateError('Grooves are not generated')
    return {
        'q_s_rad': profile.q_s.tolist(),
        'r_s_m': profile.r_s.tolist(),
        'z_s_m': profile.z_s.tolist(),
        'warnings': list(profile.warnings),
        'grooves': [
            {
                'joint_index': groove.joint_index,
                'groove_side': groove.side,
                'q_s_rad': groove.q_s.tolist(),
                'theta_rad': groove.theta.tolist(),
                'r_m': groove.r.tolist(),
                'z_m': groove.z.tolist(),
            }
            for groove in profile.grooves
        ],
    }


def export_profile(
    profile: SpiralProfile,
    path: Path,
    fmt: ExportFormat = ExportFormat.CSV,
) -> Path:
    """Write a grooved profile as CSV rows or as a JSON document.

    CSV columns are q_s_rad, theta_deg, r_mm, z_mm, joint_index and
    groove_side.

    Raises:
        GridError: If the profile is empty
        StorageError: If the file cannot be written
    """
    path = Path(path)
    if ExportFormat(fmt) is ExportFormat.CSV:
        storage.write_csv(path, profile_table(profile))
    else:
        storage.write_json(path, profile_document(profile))
    return path


def read_profile_json(path: Path) -> SpiralProfile:
    """Load a profile written by :func:`export_profile` as JSON."""
    document = storage.read_json(Path(path))
    try:
        grooves = [
            GroovePolyline(
                joint_index=item['joint_index'],
                side=item['groove_side'],
                q_s=np.array(item['q_s_rad']),
                theta=np.array(item['theta_rad']),
                r=np.array(item['r_m']),
                z=np.array(item['z_m']),
            )
            for item in document['grooves']
        ]
        return SpiralProfile(
            q_s=document['q_s_rad'],
            r_s=document['r_s_m'],
            z_s=document['z_s_m'],
            grooves=grooves,
            warnings=document.get('warnings', ()),
        )
    except (KeyError, TypeError) as exc:
        raise ProfileStateError(
            'Malformed profile document', [str(exc)]
        ) from exc
