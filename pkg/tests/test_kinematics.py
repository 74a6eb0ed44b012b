import numpy as np
import pytest

import oracles
from conftest import random_q
from egoplan import kinematics
from egoplan.kinematics import (
    ArmLink,
    ArmModel,
    RobotModel,
    SphereSpec,
    check_limits,
    collision_spheres_at,
    end_effector_position,
    forward_kinematics,
    linear_interpolate,
)
from egoplan.transforms import Pose, quat_to_matrix, rotation_angle


def single_joint_model():
    """One meaningful z joint followed by an x-offset child link."""
    link0 = ArmLink(axis=np.array([0.0, 0.0, 1.0]), offset=Pose.identity(), lower=-np.pi, upper=np.pi)
    rest = [
        ArmLink(axis=np.array([0.0, 0.0, 1.0]), offset=Pose.from_xyz(0.3, 0.0, 0.0) if i == 0 else Pose.identity(),
                lower=-np.pi, upper=np.pi)
        for i in range(6)
    ]
    arm = ArmModel(
        links=tuple([link0] + rest),
        base_pose=Pose.identity(),
        ee_offset=Pose.identity(),
        spheres=(SphereSpec(0, np.zeros(3), 0.05),),
    )
    return RobotModel(left=arm, right=arm, torso_frame=Pose.identity(), head_frame=Pose.identity())


def test_all_zero_q_composes_fixed_offsets_only(model):
    fk = forward_kinematics(model, np.zeros(14))
    # arms hang straight down: elbow 0.25 below the shoulder, hand at 0.60
    np.testing.assert_allclose(fk.left[3].translation, [0.0, 0.20, -0.25], atol=1e-12)
    np.testing.assert_allclose(fk.left_ee.translation, [0.0, 0.20, -0.60], atol=1e-12)
    np.testing.assert_allclose(fk.right_ee.translation, [0.0, -0.20, -0.60], atol=1e-12)
    for pose in fk.frames():
        np.testing.assert_allclose(quat_to_matrix(pose.rotation), np.eye(3), atol=1e-12)


def test_quarter_turn_about_z_moves_child_offset():
    m = single_joint_model()
    q = np.zeros(14)
    q[0] = np.pi / 2
    fk = forward_kinematics(m, q)
    np.testing.assert_allclose(fk.left[1].translation, [0.0, 0.3, 0.0], atol=1e-12)


def test_fk_matches_homogeneous_oracle(model):
    gen = np.random.default_rng(7)
    for _ in range(50):
        q = random_q(model, gen)
        fk = forward_kinematics(model, q)
        ref = oracles.fk_homogeneous(model, q)
        for side in ("left", "right"):
            poses = getattr(fk, side)
            for j in range(7):
                np.testing.assert_allclose(poses[j].translation, ref[side][j][:3, 3], atol=1e-10)
                assert rotation_angle(quat_to_matrix(poses[j].rotation).T @ ref[side][j][:3, :3]) < 1e-10
            ee = fk.left_ee if side == "left" else fk.right_ee
            np.testing.assert_allclose(ee.translation, ref[f"{side}_ee"][:3, 3], atol=1e-10)


def test_end_effector_consistent_with_fk(model):
    gen = np.random.default_rng(11)
    for _ in range(20):
        q = random_q(model, gen)
        fk = forward_kinematics(model, q)
        np.testing.assert_array_equal(end_effector_position(model, q, "left"), fk.left_ee.translation)
        np.testing.assert_array_equal(end_effector_position(model, q, "right"), fk.right_ee.translation)


def test_end_effector_zero_pose_is_offset_sum(model):
    np.testing.assert_allclose(end_effector_position(model, np.zeros(14), "left"), [0.0, 0.20, -0.60], atol=1e-12)


def test_rejects_non_finite_angles(model):
    q = np.zeros(14)
    q[3] = np.nan
    with pytest.raises(ValueError, match=r"q\[3\]"):
        forward_kinematics(model, q)
    with pytest.raises(ValueError):
        end_effector_position(model, q, "left")


def test_collision_sphere_trivial_and_oracle(model):
    centers, radii = collision_spheres_at(model, np.zeros(14))
    assert centers.shape == (28, 3)
    assert radii.shape == (28,)
    # shoulder sphere has a zero local center, so it sits at the link frame
    np.testing.assert_allclose(centers[0], [0.0, 0.20, 0.0], atol=1e-12)

    gen = np.random.default_rng(23)
    for _ in range(25):
        q = random_q(model, gen)
        centers, _ = collision_spheres_at(model, q)
        np.testing.assert_allclose(centers, oracles.sphere_centers_oracle(model, q), atol=1e-10)


def test_sphere_count_and_radii_invariant_under_q(model):
    gen = np.random.default_rng(3)
    _, radii0 = collision_spheres_at(model, np.zeros(14))
    for _ in range(5):
        centers, radii = collision_spheres_at(model, random_q(model, gen))
        assert centers.shape[0] == model.num_spheres()
        np.testing.assert_array_equal(radii, radii0)


def test_fk_equivariant_under_base_change(model):
    gen = np.random.default_rng(40)
    for _ in range(10):
        q = random_q(model, gen)
        axis = gen.normal(size=3)
        axis /= np.linalg.norm(axis)
        t = Pose.from_axis_angle(axis, gen.uniform(-np.pi, np.pi), gen.normal(size=3))
        moved = RobotModel(
            left=model.left,
            right=model.right,
            torso_frame=t.compose(model.torso_frame),
            head_frame=model.head_frame,
            torso_spheres=model.torso_spheres,
        )
        base = forward_kinematics(model, q)
        shifted = forward_kinematics(moved, q)
        for a, b in zip(base.frames(), shifted.frames()):
            expected = t.compose(a)
            np.testing.assert_allclose(b.translation, expected.translation, atol=1e-10)
            assert rotation_angle(quat_to_matrix(b.rotation).T @ quat_to_matrix(expected.rotation)) < 1e-10


def test_check_limits(model):
    assert check_limits(model, model.lower_limits) == []
    q = np.zeros(14)
    q[3] = model.upper_limits[3] + 0.01
    report = check_limits(model, q)
    assert len(report) == 1
    assert report[0].index == 3
    assert report[0].name == "left.elbow_pitch"

    gen = np.random.default_rng(5)
    for _ in range(20):
        assert check_limits(model, random_q(model, gen)) == []


def test_linear_interpolate_contract():
    q0 = np.zeros(14)
    q1 = np.ones(14)
    with pytest.raises(ValueError):
        linear_interpolate(q0, q1, 1)

    same = linear_interpolate(q0, q0, 4)
    assert np.all(same == q0)

    two = linear_interpolate(q0, q1, 2)
    np.testing.assert_array_equal(two, np.stack([q0, q1]))

    five = linear_interpolate(q0, q1, 5)
    np.testing.assert_array_equal(five[:, 0], [0.0, 0.25, 0.5, 0.75, 1.0])


def test_linear_interpolate_reverse_symmetry():
    gen = np.random.default_rng(9)
    q0 = gen.normal(size=14)
    q1 = gen.normal(size=14)
    fwd = linear_interpolate(q0, q1, 11)
    back = linear_interpolate(q1, q0, 11)
    np.testing.assert_array_equal(fwd[::-1], back)


def test_jacobians_match_finite_differences(model):
    gen = np.random.default_rng(77)
    h = 1e-7
    for _ in range(5):
        q = random_q(model, gen)
        jac = kinematics.sphere_jacobians(model, q)
        centers0, _ = collision_spheres_at(model, q)
        for j in range(14):
            qp = q.copy()
            qp[j] += h
            qm = q.copy()
            qm[j] -= h
            cp, _ = collision_spheres_at(model, qp)
            cm, _ = collision_spheres_at(model, qm)
            fd = (cp - cm) / (2 * h)
            np.testing.assert_allclose(jac[:, :, j], fd, atol=5e-6)

        for side in ("left", "right"):
            jee = kinematics.ee_jacobian(model, q, side)
            for j in range(14):
                qp = q.copy()
                qp[j] += h
                qm = q.copy()
                qm[j] -= h
                fd = (end_effector_position(model, qp, side) - end_effector_position(model, qm, side)) / (2 * h)
                np.testing.assert_allclose(jee[:, j], fd, atol=5e-6)
