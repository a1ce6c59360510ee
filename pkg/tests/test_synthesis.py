import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dsj_toolkit.exceptions import (
    DomainError,
    GridError,
    InfeasibleTargetError,
    ProfileStateError,
    StructureError,
)
from dsj_toolkit.models import StiffnessSchedule
from dsj_toolkit.stiffness import k_max, spiral_stiffness_from_radii
from dsj_toolkit.synthesis import (
    PROFILE_COLUMNS,
    ExportFormat,
    SpiralProfile,
    export_profile,
    generate_groove,
    groove_arc_length,
    passive_stiffness_along,
    profile_table,
    read_profile_json,
    solve_spiral_radii,
    validate_assumptions,
)
from tests.conftest import R_JOINT


def _radius_for(alpha: float) -> float:
    """Spiral radius of the reference design at a stiffness fraction."""
    return R_JOINT * math.sqrt(alpha / (2.0 * (1.0 - alpha)))


@pytest.fixture
def ramp() -> SpiralProfile:
    """Three-sample profile with a doubling radius per segment."""
    return SpiralProfile(
        q_s=[0.0, 1.0, 2.0], r_s=[[1.0, 2.0], [2.0, 4.0], [4.0, 8.0]]
    )


class TestSpiralProfile:
    """Piecewise-linear radius law of a sampled profile."""

    @staticmethod
    def test_radius_interpolates_per_joint(ramp):
        """Each joint reads the radius at its own angle."""
        assert_allclose(ramp.radius(np.array([0.5, 1.5])), [1.5, 6.0])

    @staticmethod
    def test_radius_extrapolates_end_segments(ramp):
        """Outside the grid the end segments continue."""
        assert_allclose(ramp.radius(np.array([-0.5, 2.5])), [0.5, 10.0])
        assert_allclose(ramp.slope(np.array([-0.5, 2.5])), [1.0, 4.0])

    @staticmethod
    def test_wrap_within_and_across_segments(ramp):
        """Wrapped length integrates the radius exactly."""
        assert_allclose(
            ramp.wrap(np.array([0.2, 0.0]), np.array([0.6, 2.0])),
            [0.56, 9.0],
        )
        assert_allclose(
            ramp.wrap(np.array([0.6, 2.0]), np.array([0.2, 0.0])),
            [-0.56, -9.0],
        )

    @staticmethod
    @pytest.mark.parametrize('step', [-1e-7, 1e-7])
    def test_short_wrap_at_a_sample(reference_profile, step):
        """A tiny span starting on a sample keeps full precision."""
        k = 180
        q = reference_profile.q_s[k]
        r = reference_profile.r_s
        side = k - 1 if step < 0 else k
        slope = (r[side + 1] - r[side]) / (
            reference_profile.q_s[side + 1] - reference_profile.q_s[side]
        )
        start = np.full(2, q)
        stop = start + step
        span = stop - start
        expected = span * (r[k] + 0.5 * slope * span)
        assert_allclose(
            reference_profile.wrap(start, stop), expected, rtol=1e-12
        )

    @staticmethod
    def test_radius_at_shared_angles(ramp):
        """radius_at returns one row per angle."""
        assert ramp.radius_at([0.0, 1.0]).shape == (2, 2)
        assert_allclose(ramp.radius_at(1.0), [[2.0, 4.0]])

    @staticmethod
    def test_grid_must_increase():
        """A decreasing grid raises GridError."""
        with pytest.raises(GridError):
            SpiralProfile(q_s=[1.0, 0.0], r_s=[[1.0], [1.0]])

    @staticmethod
    def test_negative_radius_is_rejected():
        """Radii are non-negative."""
        with pytest.raises(DomainError):
            SpiralProfile(q_s=[0.0, 1.0], r_s=[[1.0], [-1.0]])

    @staticmethod
    def test_single_sample_has_no_radius_law():
        """Interpolation needs two samples."""
        profile = SpiralProfile(q_s=[0.0], r_s=[[1.0, 1.0]])
        with pytest.raises(GridError):
            profile.radius(np.zeros(2))


class TestSolveSpiralRadii:
    """Radii that realize a stiffness schedule."""

    @staticmethod
    def test_reference_schedule_end_points(bundle):
        """4.24 mm at alpha 0.2 and 16.97 mm at alpha 0.8."""
        profile = solve_spiral_radii(
            bundle.schedule, bundle.pulleys, bundle.springs
        )
        assert profile.r_s.shape == (361, 2)
        assert_allclose(profile.r_s[0], [_radius_for(0.2)] * 2, rtol=1e-9)
        assert_allclose(profile.r_s[180], [_radius_for(0.5)] * 2, rtol=1e-9)
        assert_allclose(profile.r_s[-1], [_radius_for(0.8)] * 2, rtol=1e-9)
        assert profile.r_s[0, 0] * 1e3 == pytest.approx(4.2426, abs=1e-4)
        assert profile.r_s[-1, 0] * 1e3 == pytest.approx(16.9706, abs=1e-4)
        assert profile.z_s is None
        assert not profile.warnings

    @staticmethod
    def test_radii_increase_with_stiffness(reference_profile):
        """A growing fraction needs growing radii."""
        assert np.all(np.diff(reference_profile.r_s, axis=0) > 0)

    @staticmethod
    def test_solved_radii_reproduce_schedule(bundle, reference_profile):
        """Forward composition of the radii recovers alpha·K_max."""
        K_along = passive_stiffness_along(
            reference_profile, bundle.pulleys, bundle.springs
        )
        K_max = k_max(bundle.pulleys, bundle.springs).entries
        expected = bundle.schedule.alphas[:, None, None] * K_max
        assert_allclose(K_along, expected, rtol=1e-9)

    @staticmethod
    @pytest.mark.parametrize('factor', [0.25, 3.0])
    def test_radii_depend_on_spring_ratios_only(
        bundle, reference_profile, factor
    ):
        """Scaling all springs together leaves the radii unchanged."""
        profile = solve_spiral_radii(
            bundle.schedule, bundle.pulleys, bundle.springs.scaled(factor)
        )
        assert_allclose(profile.r_s, reference_profile.r_s, rtol=1e-12)

    @staticmethod
    @pytest.mark.parametrize('alpha', [0.0, 1.0, 1.3])
    def test_infeasible_fraction(pulleys, springs, alpha):
        """Fractions outside (0, 1) are reported at their q_s."""
        schedule = StiffnessSchedule(
            q_s=[0.0, 0.7, 1.4], alphas=[0.5, alpha, 0.5]
        )
        with pytest.raises(InfeasibleTargetError) as exc:
            solve_spiral_radii(schedule, pulleys, springs)
        assert exc.value.q_s == pytest.approx(0.7)

    @staticmethod
    def test_unstructured_target(pulleys, springs):
        """A feasible isotropic target has no spiral radii."""
        schedule = StiffnessSchedule(q_s=[0.0], matrices=[0.01 * np.eye(2)])
        with pytest.raises(StructureError) as exc:
            solve_spiral_radii(schedule, pulleys, springs)
        assert exc.value.residual > 1e-6
        assert exc.value.exit_code == 3

    @staticmethod
    def test_explicit_matrix_target(pulleys, springs):
        """A target built from known radii returns those radii."""
        radii = np.array([0.005, 0.011])
        K_S = spiral_stiffness_from_radii(radii, pulleys, springs).entries
        C_max = np.linalg.inv(k_max(pulleys, springs).entries)
        target = np.linalg.inv(C_max + np.linalg.inv(K_S))
        target = 0.5 * (target + target.T)
        schedule = StiffnessSchedule(q_s=[0.0], matrices=[target])
        profile = solve_spiral_radii(schedule, pulleys, springs)
        assert_allclose(profile.r_s[0], radii, rtol=1e-7)

    @staticmethod
    def test_vanishing_radius_is_a_warning(pulleys, springs):
        """A radius negligible against the other is set to zero."""
        radii = np.array([5e-4 * 0.01, 0.01])
        K_S = spiral_stiffness_from_radii(radii, pulleys, springs).entries
        C_max = np.linalg.inv(k_max(pulleys, springs).entries)
        target = np.linalg.inv(C_max + np.linalg.inv(K_S))
        target = 0.5 * (target + target.T)
        schedule = StiffnessSchedule(q_s=[0.25], matrices=[target])
        profile = solve_spiral_radii(schedule, pulleys, springs)
        assert profile.r_s[0, 0] == 0.0
        assert profile.r_s[0, 1] == pytest.approx(0.01, rel=1e-2)
        assert len(profile.warnings) == 1
        assert 'joint 0' in profile.warnings[0]


class TestGroove:
    """Groove elevation and mirrored polylines."""

    @staticmethod
    def test_reference_grooves(reference_profile):
        """Two mirrored grooves per joint at 1 degree spacing."""
        assert reference_profile.has_grooves
        assert len(reference_profile.grooves) == 4
        assert reference_profile.z_s[0] == pytest.approx(0.0)
        assert reference_profile.z_s[-1] == pytest.approx(0.012)
        for groove in reference_profile.grooves:
            assert groove.q_s.size == 721
            assert groove.z[-1] == pytest.approx(0.012)

    @staticmethod
    def test_mirrored_side_shares_radius(reference_profile):
        """The mirror negates theta and keeps r and z."""
        primary, mirror = reference_profile.grooves[:2]
        assert (primary.side, mirror.side) == (0, 1)
        assert_allclose(mirror.theta, -primary.theta)
        assert_allclose(mirror.r, primary.r)
        assert_allclose(mirror.z, primary.z)

    @staticmethod
    def test_polyline_follows_radius_law(reference_profile):
        """Resampled radii lie on the piecewise-linear law."""
        groove = reference_profile.grooves[2]
        assert groove.joint_index == 1
        assert_allclose(
            groove.r, reference_profile.radius_at(groove.q_s)[:, 1]
        )

    @staticmethod
    def test_elevation_must_rise(reference_profile):
        """z_hi must be above z_lo."""
        with pytest.raises(DomainError):
            generate_groove(reference_profile, (0.01, 0.01))

    @staticmethod
    def test_empty_profile_has_no_groove():
        """Radii must be solved first."""
        empty = SpiralProfile(q_s=np.array([]), r_s=np.zeros((0, 2)))
        with pytest.raises(ProfileStateError):
            generate_groove(empty, (0.0, 0.01))


class TestAssumptions:
    """Small-slope checks of the groove."""

    @staticmethod
    def test_reference_profile_passes(reference_profile):
        """Raw ratios exceed 5% but the induced errors do not."""
        report = validate_assumptions(reference_profile)
        assert report.max_slope_ratio_r == pytest.approx(0.149, abs=2e-3)
        assert report.max_slope_ratio_z == pytest.approx(0.225, abs=2e-3)
        assert report.slope_error_r < 0.02
        assert report.slope_error_z < 0.03
        assert 0.0 < report.arc_length_rel_error < 0.02
        assert report.passed
        assert report.to_dict()['passed'] is True

    @staticmethod
    def test_compressed_profile_fails(bundle):
        """Squeezing the schedule into a quarter turn breaks the slopes."""
        schedule = StiffnessSchedule.linear(0.2, 0.8, 0.0, math.pi / 2, 46)
        profile = generate_groove(
            solve_spiral_radii(schedule, bundle.pulleys, bundle.springs),
            bundle.plan.z_range,
        )
        report = validate_assumptions(profile)
        assert not report.passed_r
        assert not report.passed_z
        assert not report.passed

    @staticmethod
    def test_threshold_is_configurable(reference_profile):
        """A strict threshold fails the reference profile."""
        assert not validate_assumptions(reference_profile, 0.001).passed

    @staticmethod
    def test_elevation_is_required(bundle):
        """Assumptions need the groove elevation."""
        profile = solve_spiral_radii(
            bundle.schedule, bundle.pulleys, bundle.springs
        )
        with pytest.raises(ProfileStateError):
            validate_assumptions(profile)
        with pytest.raises(ProfileStateError):
            groove_arc_length(profile)

    @staticmethod
    def test_short_grid_is_rejected():
        """Fewer than three samples cannot be differentiated."""
        short = SpiralProfile(
            q_s=[0.0, 1.0], r_s=[[1.0, 1.0], [2.0, 2.0]], z_s=[0.0, 1.0]
        )
        with pytest.raises(GridError):
            validate_assumptions(short)

    @staticmethod
    def test_arc_length_of_circle():
        """A flat circle of radius r wraps r per radian."""
        profile = generate_groove(
            SpiralProfile(
                q_s=np.linspace(0.0, 2 * math.pi, 9),
                r_s=np.full((9, 1), 0.01),
            ),
            (0.0, 1e-9),
        )
        arc = groove_arc_length(profile)
        assert arc.approximate[-1, 0] == pytest.approx(0.02 * math.pi)
        assert_allclose(arc.relative_gap, 0.0, atol=1e-12)


class TestExport:
    """CSV and JSON forms of a grooved profile."""

    @staticmethod
    def test_table_order_and_units(reference_profile):
        """Rows are ordered by joint, then side, then point."""
        table = profile_table(reference_profile)
        assert tuple(table.header) == PROFILE_COLUMNS
        assert len(table.rows) == 4 * 721
        first, last = table.rows[0], table.rows[-1]
        assert first[4:] == (0, 0)
        assert last[4:] == (1, 1)
        assert first[2] == pytest.approx(4.2426, abs=1e-4)
        assert last[1] == pytest.approx(-720.0)
        assert last[3] == pytest.approx(12.0)

    @staticmethod
    def test_table_needs_grooves(bundle):
        """An ungrooved profile cannot be exported."""
        profile = solve_spiral_radii(
            bundle.schedule, bundle.pulleys, bundle.springs
        )
        with pytest.raises(ProfileStateError):
            profile_table(profile)

    @staticmethod
    def test_csv_export(reference_profile, tmp_path):
        """The CSV holds a header and one line per groove point."""
        path = export_profile(reference_profile, tmp_path / 'profile.csv')
        lines = path.read_text(encoding='utf-8').splitlines()
        assert lines[0] == ','.join(PROFILE_COLUMNS)
        assert len(lines) == 1 + 4 * 721

    @staticmethod
    def test_json_export_reads_back(reference_profile, tmp_path):
        """The JSON document restores radii, elevation and grooves."""
        path = export_profile(
            reference_profile, tmp_path / 'profile.json', ExportFormat.JSON
        )
        restored = read_profile_json(path)
        assert_allclose(restored.r_s, reference_profile.r_s)
        assert_allclose(restored.z_s, reference_profile.z_s)
        assert len(restored.grooves) == 4
        assert_allclose(
            restored.grooves[1].theta, reference_profile.grooves[1].theta
        )
