import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from dsj_toolkit.exceptions import (
    ConvergenceError,
    DomainError,
    SingularityError,
)
from dsj_toolkit.kinematics import (
    forward_kinematics,
    grasp_force_curve,
    jacobians,
    radial_direction,
    task_space_stiffness,
)
from dsj_toolkit.models import BasePose, FingerGeometry, Frame
from dsj_toolkit.schemas import GraspMode
from dsj_toolkit.stiffness import k_max

Q0 = np.radians([30.0, 45.0])


def _surface_direction(q: np.ndarray) -> np.ndarray:
    return np.array([-math.sin(q[0] + q[1]), math.cos(q[0] + q[1])])


class TestForwardKinematics:
    """Planar chain geometry."""

    @staticmethod
    def test_straight_finger(finger):
        """At q = 0 the tip lies on the x axis."""
        assert_allclose(forward_kinematics(finger, [0.0, 0.0]), [0.09, 0.0])

    @staticmethod
    def test_bent_finger(finger):
        """A right angle at the base points the finger along y."""
        tip = forward_kinematics(finger, [math.pi / 2, 0.0])
        assert_allclose(tip, [0.0, 0.09], atol=1e-15)

    @staticmethod
    def test_folded_finger(finger):
        """Folding the distal link back points it along x."""
        tip = forward_kinematics(finger, [math.pi / 2, -math.pi / 2])
        assert_allclose(tip, [0.04, 0.05], atol=1e-15)

    @staticmethod
    def test_base_pose_offsets_the_chain():
        """The base pose translates and rotates the finger."""
        finger = FingerGeometry(
            link_lengths=[0.05, 0.04],
            base_pose=BasePose(x=0.01, y=-0.02, theta=math.pi / 2),
        )
        assert_allclose(
            forward_kinematics(finger, [0.0, 0.0]), [0.01, 0.07], atol=1e-15
        )

    @staticmethod
    def test_radial_direction_is_unit(finger):
        """The radial direction points from base to tip."""
        direction = radial_direction(finger, Q0)
        tip = forward_kinematics(finger, Q0)
        assert np.linalg.norm(direction) == pytest.approx(1.0)
        assert_allclose(direction, tip / np.linalg.norm(tip))


class TestJacobians:
    """Analytic Jacobians against finite differences."""

    @staticmethod
    def test_fingertip_jacobian(finger):
        """J matches the derivative of the forward kinematics."""
        h = 1e-7
        bundle = jacobians(finger, Q0, radial_direction(finger, Q0))
        numeric = np.column_stack([
            (forward_kinematics(finger, Q0 + h * e)
             - forward_kinematics(finger, Q0 - h * e)) / (2 * h)
            for e in np.eye(2)
        ])
        assert_allclose(bundle.J, numeric, rtol=1e-7, atol=1e-12)

    @staticmethod
    def test_jacobian_derivative(finger):
        """dJT_dq[i, k, j] is ∂J[k, i]/∂q[j]."""
        h = 1e-6
        direction = np.array([1.0, 0.0])
        bundle = jacobians(finger, Q0, direction)
        for j, e in enumerate(np.eye(2)):
            forward = jacobians(finger, Q0 + h * e, direction).J
            backward = jacobians(finger, Q0 - h * e, direction).J
            numeric = ((forward - backward) / (2 * h)).T
            assert_allclose(
                bundle.dJT_dq[:, :, j], numeric, rtol=1e-6, atol=1e-10
            )

    @staticmethod
    def test_straight_finger_jacobian(finger):
        """At q = 0 the tip only moves along y."""
        bundle = jacobians(finger, [0.0, 0.0], np.array([1.0, 0.0]))
        assert_allclose(bundle.J, [[0.0, 0.0], [0.09, 0.04]], atol=1e-15)

    @staticmethod
    def test_random_configurations(finger, rng):
        """J and dJT_dq match central differences away from q2 = 0, π."""
        h = 1e-6
        direction = np.array([0.0, 1.0])
        checked = 0
        for q in rng.uniform(-math.pi, math.pi, size=(1000, 2)):
            if abs(math.sin(q[1])) < 0.05:
                continue
            bundle = jacobians(finger, q, direction)
            numeric_J = np.column_stack([
                (forward_kinematics(finger, q + h * e)
                 - forward_kinematics(finger, q - h * e)) / (2 * h)
                for e in np.eye(2)
            ])
            numeric_dJT = np.stack(
                [
                    (jacobians(finger, q + h * e, direction).J
                     - jacobians(finger, q - h * e, direction).J).T
                    / (2 * h)
                    for e in np.eye(2)
                ],
                axis=-1,
            )
            J_error = np.linalg.norm(numeric_J - bundle.J)
            dJT_error = np.linalg.norm(numeric_dJT - bundle.dJT_dq)
            assert J_error < 1e-6 * np.linalg.norm(bundle.J)
            assert dJT_error < 1e-6 * np.linalg.norm(bundle.dJT_dq)
            checked += 1
        assert checked > 900

    @staticmethod
    def test_fixed_mode_has_constant_direction(finger):
        """The fixed mode has no direction derivative."""
        direction = radial_direction(finger, Q0)
        bundle = jacobians(finger, Q0, direction)
        assert_allclose(bundle.J_p, direction[np.newaxis, :])
        assert_allclose(bundle.dJpT_dx, 0.0)

    @staticmethod
    def test_surface_normal_derivative(finger):
        """dJ_pᵀ/dx · J reproduces the direction change per joint."""
        h = 1e-7
        bundle = jacobians(finger, Q0, mode=GraspMode.SURFACE_NORMAL)
        assert_allclose(bundle.J_p[0], _surface_direction(Q0))
        numeric = np.column_stack([
            (_surface_direction(Q0 + h * e)
             - _surface_direction(Q0 - h * e)) / (2 * h)
            for e in np.eye(2)
        ])
        assert_allclose(bundle.dJpT_dx @ bundle.J, numeric, rtol=1e-7)

    @staticmethod
    def test_fixed_mode_needs_a_direction(finger):
        """A missing direction raises DomainError."""
        with pytest.raises(DomainError):
            jacobians(finger, Q0)

    @staticmethod
    def test_direction_must_be_unit(finger):
        """A non-unit direction raises DomainError."""
        with pytest.raises(DomainError):
            jacobians(finger, Q0, np.array([1.0, 1.0]))

    @staticmethod
    def test_straight_finger_is_singular(finger):
        """The surface-normal mode inverts J."""
        with pytest.raises(SingularityError) as exc:
            jacobians(finger, [0.0, 0.0], mode=GraspMode.SURFACE_NORMAL)
        assert exc.value.path == 'jacobian'


class TestTaskSpaceStiffness:
    """Projection of the joint stiffness onto the grasp direction."""

    @staticmethod
    def test_unloaded_projection(finger, pulleys, springs):
        """With no force K_p = dᵀ J⁻ᵀ K J⁻¹ d."""
        K = k_max(pulleys, springs).scaled(0.5)
        direction = radial_direction(finger, Q0)
        bundle = jacobians(finger, Q0, direction)
        K_p = task_space_stiffness(K, bundle)
        J_inv = np.linalg.inv(bundle.J)
        expected = direction @ J_inv.T @ K.entries @ J_inv @ direction
        assert K_p.frame is Frame.TASK
        assert K_p.entries.shape == (1, 1)
        assert K_p.entries[0, 0] == pytest.approx(expected, rel=1e-10)

    @staticmethod
    def test_unloaded_matches_statics(finger, pulleys, springs):
        """K_p is the slope of the restoring task force at Δp = 0."""
        K = k_max(pulleys, springs).scaled(0.5)
        direction = radial_direction(finger, Q0)
        J0 = jacobians(finger, Q0, direction).J
        tip = forward_kinematics(finger, Q0)

        def task_force(deviation):
            target = tip + deviation * direction
            q = Q0.copy()
            for _ in range(20):
                residual = forward_kinematics(finger, q) - target
                q = q - np.linalg.solve(
                    jacobians(finger, q, direction).J, residual
                )
            torque = K.entries @ (q - Q0)
            return direction @ np.linalg.solve(J0.T, torque)

        h = 1e-6
        slope = (task_force(h) - task_force(-h)) / (2 * h)
        K_p = task_space_stiffness(
            K, jacobians(finger, Q0, direction)
        ).entries[0, 0]
        assert slope == pytest.approx(K_p, rel=1e-4)

    @staticmethod
    def test_force_adds_geometric_term(finger, pulleys, springs):
        """A task force changes K_p linearly."""
        K = k_max(pulleys, springs).scaled(0.5)
        bundle = jacobians(finger, Q0, radial_direction(finger, Q0))
        base = task_space_stiffness(K, bundle, 0.0).entries[0, 0]
        one = task_space_stiffness(K, bundle, 1.0).entries[0, 0]
        two = task_space_stiffness(K, bundle, 2.0).entries[0, 0]
        assert one != pytest.approx(base)
        assert two - base == pytest.approx(2 * (one - base), rel=1e-9)

    @staticmethod
    def test_singular_jacobian(finger, pulleys, springs):
        """A straight finger has no task stiffness."""
        bundle = jacobians(finger, [0.0, 0.0], np.array([1.0, 0.0]))
        with pytest.raises(SingularityError):
            task_space_stiffness(k_max(pulleys, springs), bundle)


class TestGraspForceCurve:
    """Fixed-point grasp force along a deviation grid."""

    @staticmethod
    def test_zero_deviation_has_zero_force(finger, pulleys, springs):
        """Δp = 0 gives F = 0 and the unloaded K_p."""
        K = k_max(pulleys, springs).scaled(0.5)
        direction = radial_direction(finger, Q0)
        curve = grasp_force_curve(finger, K, Q0, [0.0], direction)
        bundle = jacobians(finger, Q0, direction)
        assert curve.force[0] == 0.0
        assert curve.iterations[0] == 0
        assert curve.task_stiffness[0] == pytest.approx(
            task_space_stiffness(K, bundle).entries[0, 0]
        )

    @staticmethod
    @pytest.mark.parametrize(
        'mode', [GraspMode.FIXED, GraspMode.SURFACE_NORMAL]
    )
    def test_force_is_a_fixed_point(finger, pulleys, springs, mode):
        """Converged forces satisfy F = K_p(F) Δp."""
        K = k_max(pulleys, springs).scaled(0.5)
        direction = (
            radial_direction(finger, Q0) if mode is GraspMode.FIXED else None
        )
        deviations = np.linspace(0.0, 0.008, 9)
        curve = grasp_force_curve(
            finger, K, Q0, deviations, direction, mode=mode
        )
        assert_allclose(
            curve.force,
            curve.task_stiffness * deviations,
            rtol=1e-6,
            atol=1e-12,
        )
        assert np.all(np.diff(curve.force) > 0)

    @staticmethod
    def test_stiffer_design_grasps_harder(finger, pulleys, springs):
        """A larger stiffness fraction gives a larger force."""
        K_max = k_max(pulleys, springs)
        direction = radial_direction(finger, Q0)
        deviations = np.linspace(0.0005, 0.008, 5)
        soft = grasp_force_curve(
            finger, K_max.scaled(0.2), Q0, deviations, direction
        )
        stiff = grasp_force_curve(
            finger, K_max.scaled(0.8), Q0, deviations, direction
        )
        assert np.all(stiff.force > soft.force)

    @staticmethod
    def test_iteration_cap(finger, pulleys, springs):
        """A single allowed iteration does not converge."""
        K = k_max(pulleys, springs).scaled(0.5)
        with pytest.raises(ConvergenceError) as exc:
            grasp_force_curve(
                finger,
                K,
                Q0,
                [0.008],
                radial_direction(finger, Q0),
                max_iter=1,
            )
        assert exc.value.iterations == 1
        assert exc.value.exit_code == 4

    @staticmethod
    def test_task_states(finger, pulleys, springs):
        """Each deviation maps to a task state at the fingertip."""
        K = k_max(pulleys, springs).scaled(0.5)
        curve = grasp_force_curve(
            finger, K, Q0, [0.0, 0.004], radial_direction(finger, Q0)
        )
        states = curve.states
        assert len(states) == 2
        assert_allclose(states[1].x, forward_kinematics(finger, Q0))
        assert states[1].delta_p == pytest.approx(0.004)
        assert states[1].F_p == pytest.approx(curve.force[1])
