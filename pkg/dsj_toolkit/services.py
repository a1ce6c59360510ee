import logging
from functools import cached_property
from typing import Dict, Optional

import numpy as np

from dsj_toolkit import storage
from dsj_toolkit.exceptions import AssumptionError, DomainError
from dsj_toolkit.kinematics import grasp_force_curve, radial_direction
from dsj_toolkit.models import ModelBundle, StiffnessMatrix
from dsj_toolkit.schemas import GraspMode
from dsj_toolkit.settings import Settings, get_settings
from dsj_toolkit.sim import (
    ellipse_axes,
    response_metrics,
    simulate_step_response,
    stiffness_ellipse,
)
from dsj_toolkit.stiffness import DSJTorqueModel, k_max
from dsj_toolkit.synthesis import (
    AssumptionReport,
    SpiralProfile,
    generate_groove,
    passive_stiffness_along,
    profile_document,
    profile_table,
    solve_spiral_radii,
    validate_assumptions,
)

logger = logging.getLogger(__name__)

Artifacts = Dict[str, storage.Artifact]


def _relative_error(K: np.ndarray, reference: np.ndarray) -> float:
    return float(np.linalg.norm(K - reference) / np.linalg.norm(reference))


class DesignService:
    """Service class running the design and validation pipelines.

    Every pipeline returns the artifacts to write, keyed by file name.
    """

    def __init__(
        self, bundle: ModelBundle, settings: Optional[Settings] = None
    ):
        self.bundle = bundle
        self.settings = settings or get_settings()

    @cached_property
    def K_max(self) -> StiffnessMatrix:
        return k_max(self.bundle.pulleys, self.bundle.springs)

    @cached_property
    def profile(self) -> SpiralProfile:
        """Solved and grooved spiral profile of the schedule."""
        logger.info('Solving spiral radii')
        profile = solve_spiral_radii(
            self.bundle.schedule, self.bundle.pulleys, self.bundle.springs
        )
        return generate_groove(profile, self.bundle.plan.z_range)

    def assumptions(self) -> AssumptionReport:
        return validate_assumptions(
            self.profile, self.settings.ASSUMPTION_THRESHOLD
        )

    def probe_q_s(self, alpha: float) -> float:
        """Spiral angle at which the schedule reaches a stiffness fraction.

        Raises:
            DomainError: If the schedule is not a monotone fraction schedule
                covering alpha
        """
        schedule = self.bundle.schedule
        if not schedule.is_fractional:
            raise DomainError(
                'Probing needs a schedule given as fractions of K_max',
                ['schedule.points'],
            )
        alphas, q_s = schedule.alphas, schedule.q_s
        if alphas.size > 1 and np.all(np.diff(alphas) < 0):
            alphas, q_s = alphas[::-1], q_s[::-1]
        elif alphas.size > 1 and not np.all(np.diff(alphas) > 0):
            raise DomainError(
                'Probing needs a monotone schedule', ['schedule']
            )
        if not alphas[0] <= alpha <= alphas[-1]:
            raise DomainError(
                f'Probe fraction {alpha} is outside the schedule',
                [f'range [{alphas[0]}, {alphas[-1]}]'],
            )
        return float(np.interp(alpha, alphas, q_s))

    def synth(self) -> Artifacts:
        """Spiral radii, grooves, stiffness sweep and assumption report."""
        profile = self.profile
        report = self.assumptions()
        K_along = passive_stiffness_along(
            profile, self.bundle.pulleys, self.bundle.springs
        )
        dof = K_along.shape[1]
        pairs = [(i, j) for i in range(dof) for j in range(i, dof)]
        stiffness = storage.Table(
            ['q_s_rad']
            + [f'r_s{i + 1}_mm' for i in range(dof)]
            + [f'k{i + 1}{j + 1}_nm_per_rad' for i, j in pairs],
            [
                [float(q)]
                + [float(r) * 1e3 for r in radii]
                + [float(K[i, j]) for i, j in pairs]
                for q, radii, K in zip(profile.q_s, profile.r_s, K_along)
            ],
        )
        logger.info(
            'Radii span %.4f to %.4f mm; assumptions %s',
            profile.r_s.min() * 1e3,
            profile.r_s.max() * 1e3,
            'pass' if report.passed else 'fail',
        )
        return {
            'profile.csv': profile_table(profile),
            'profile.json': profile_document(profile),
            'stiffness.csv': stiffness,
            'assumptions.json': report.to_dict(),
        }

    def validate(self) -> Artifacts:
        """Assumption checks only.

        Raises:
            AssumptionError: If the profile violates the threshold
        """
        report = self.assumptions()
        if not report.passed:
            raise AssumptionError(
                'Profile violates the small-slope assumptions',
                [
                    f'slope error r {report.slope_error_r:.4g}',
                    f'slope error z {report.slope_error_z:.4g}',
                    f'arc gap {report.arc_length_rel_error:.4g}',
                ],
            )
        logger.info('Configuration and assumptions are valid')
        return {'assumptions.json': report.to_dict()}

    def ellipse(self) -> Artifacts:
        """Regressed and desired stiffness ellipses at the probe fractions."""
        plan = self.bundle.plan
        samples, summary = [], []
        for alpha in plan.probe_alphas:
            q_s = self.probe_q_s(float(alpha))
            model = DSJTorqueModel(
                self.profile, self.bundle.pulleys, self.bundle.springs, q_s
            )
            logger.info('Ellipse at alpha=%.3g (q_s=%.4f rad)', alpha, q_s)
            result = stiffness_ellipse(
                model,
                np.zeros(2),
                plan.ellipse_radius,
                plan.ellipse_samples,
            )
            desired = self.K_max.scaled(float(alpha))
            fitted = -(result.deviations @ result.K_regressed.entries.T)
            target = -(result.deviations @ desired.entries.T)
            for index, row in enumerate(
                np.hstack([result.deviations, result.torques, fitted, target])
            ):
                samples.append([float(alpha), index, *map(float, row)])
            for source, K in (
                ('regressed', result.K_regressed),
                ('desired', desired),
            ):
                axes, orientation = ellipse_axes(K)
                summary.append([
                    float(alpha),
                    q_s,
                    source,
                    float(K.entries[0, 0]),
                    float(K.entries[0, 1]),
                    float(K.entries[1, 1]),
                    float(axes[0]),
                    float(axes[1]),
                    orientation,
                    _relative_error(K.entries, desired.entries),
                ])
        return {
            'ellipse.csv': storage.Table(
                [
                    'alpha',
                    'sample',
                    'dq1_rad',
                    'dq2_rad',
                    'tau1_nm',
                    'tau2_nm',
                    'fit_tau1_nm',
                    'fit_tau2_nm',
                    'desired_tau1_nm',
                    'desired_tau2_nm',
                ],
                samples,
            ),
            'ellipse_summary.csv': storage.Table(
                [
                    'alpha',
                    'q_s_rad',
                    'source',
                    'k11_nm_per_rad',
                    'k12_nm_per_rad',
                    'k22_nm_per_rad',
                    'major_nm_per_rad',
                    'minor_nm_per_rad',
                    'orientation_rad',
                    'rel_error',
                ],
                summary,
            ),
        }

    def grasp_direction(self) -> Optional[np.ndarray]:
        plan = self.bundle.plan
        if plan.grasp_mode is GraspMode.SURFACE_NORMAL:
            return None
        if plan.grasp_direction is not None:
            return plan.grasp_direction
        return radial_direction(self.bundle.finger, plan.q0)

    def grasp(self) -> Artifacts:
        """Grasp force against deviation at the probe fractions."""
        plan = self.bundle.plan
        direction = self.grasp_direction()
        rows = []
        for alpha in plan.probe_alphas:
            logger.info('Grasp curve at alpha=%.3g', alpha)
            curve = grasp_force_curve(
                self.bundle.finger,
                self.K_max.scaled(float(alpha)),
                plan.q0,
                plan.deviations,
                grasp_direction=direction,
                mode=plan.grasp_mode,
                damping=self.settings.FIXED_POINT_DAMPING,
                tolerance=self.settings.FIXED_POINT_TOLERANCE,
                max_iter=self.settings.FIXED_POINT_MAX_ITER,
            )
            for state, K_p in zip(curve.states, curve.task_stiffness):
                rows.append([
                    float(alpha),
                    state.delta_p,
                    state.F_p,
                    float(K_p),
                ])
        return {
            'grasp.csv': storage.Table(
                [
                    'alpha',
                    'deviation_m',
                    'force_n',
                    'task_stiffness_n_per_m',
                ],
                rows,
            )
        }

    def step(self) -> Artifacts:
        """Step responses and their metrics at the probe fractions."""
        plan = self.bundle.plan
        dof = self.K_max.dim
        series_rows, metric_rows = [], []
        for alpha in plan.probe_alphas:
            logger.info('Step response at alpha=%.3g', alpha)
            series = simulate_step_response(
                self.K_max.scaled(float(alpha)),
                self.bundle.dynamics,
                plan.step_targets,
                plan.horizon,
                plan.dt,
            )
            metrics = response_metrics(series, plan.step_targets)
            for t, q, qdot, tau in zip(
                series.t, series.q, series.qdot, series.tau
            ):
                series_rows.append(
                    [float(alpha), float(t)]
                    + [float(value) for value in (*q, *qdot, *tau)]
                )
            metric_rows.append([
                float(alpha),
                metrics.overshoot,
                metrics.settling_time,
                metrics.settled,
                metrics.dominant_frequency,
            ])
        joints = range(1, dof + 1)
        return {
            'step.csv': storage.Table(
                ['alpha', 't_s']
                + [f'q{i}_rad' for i in joints]
                + [f'qdot{i}_rad_per_s' for i in joints]
                + [f'tau{i}_nm' for i in joints],
                series_rows,
            ),
            'step_metrics.csv': storage.Table(
                [
                    'alpha',
                    'overshoot',
                    'settling_time_s',
                    'settled',
                    'dominant_frequency_hz',
                ],
                metric_rows,
            ),
        }
