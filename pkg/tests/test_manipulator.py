import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psmforce.manipulator import (
    JointLimitError, KinematicModel, Pose, chain, condition_number, forward_kinematics,
    jacobian, random_configuration, rcm_deviation, rot_x, rot_y, rot_z,
)

MODEL = KinematicModel()


def configs():
    return st.tuples(*[st.floats(lo, hi) for lo, hi in MODEL.limits]).map(np.array)


def line_distance(point, a, b):
    # independent point-to-line distance through two points on the shaft
    d = (b - a) / np.linalg.norm(b - a)
    v = point - a
    return np.linalg.norm(v - (v @ d) * d)


def pose_error(p0: Pose, p1: Pose) -> np.ndarray:
    dR = p1.rotation @ p0.rotation.T
    angle = 0.5 * np.array([dR[2, 1] - dR[1, 2], dR[0, 2] - dR[2, 0], dR[1, 0] - dR[0, 1]])
    return np.concatenate([p1.translation - p0.translation, angle])


def test_zero_configuration_tip_on_shaft():
    st_ = chain(MODEL, np.zeros(6))
    np.testing.assert_allclose(st_.wrist, [0.0, 0.0, -MODEL.nominal_depth], atol=1e-15)
    np.testing.assert_allclose(st_.shaft_axis, [0.0, 0.0, -1.0])
    tip = forward_kinematics(MODEL, np.zeros(6)).translation
    np.testing.assert_allclose(tip[:2], 0.0, atol=1e-15)
    assert tip[2] == pytest.approx(-(MODEL.nominal_depth + MODEL.pitch_to_yaw + MODEL.yaw_to_tip))
    assert rcm_deviation(MODEL, np.zeros(6)) < 1e-12


def test_insertion_moves_tip_along_shaft():
    q = np.array([0.3, -0.2, 0.0, 0.4, 0.2, -0.3])
    dq = q.copy()
    dq[2] = 0.05
    axis = chain(MODEL, q).shaft_axis
    step = forward_kinematics(MODEL, dq).translation - forward_kinematics(MODEL, q).translation
    np.testing.assert_allclose(step, 0.05 * axis, atol=1e-14)


@settings(max_examples=100, deadline=None)
@given(configs())
def test_shaft_passes_through_rcm(q):
    st_ = chain(MODEL, q)
    far = st_.wrist + 0.2 * st_.shaft_axis
    assert line_distance(MODEL.rcm, st_.wrist, far) < 1e-9
    assert rcm_deviation(MODEL, q) < 1e-9


@settings(max_examples=50, deadline=None)
@given(configs())
def test_pose_rotation_is_orthonormal(q):
    R = forward_kinematics(MODEL, q).rotation
    assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_pose_composition_stays_orthonormal(a, b, c):
    p = Pose(rot_x(a) @ rot_y(b), [1.0, 2.0, 3.0]).compose(Pose(rot_z(c), [0.0, 0.0, 1.0]))
    assert np.abs(p.rotation.T @ p.rotation - np.eye(3)).max() < 1e-9
    np.testing.assert_allclose(p.as_matrix()[:3, 3], p.translation)


def test_pose_rejects_reflection():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_limit_violation_names_joint():
    q = np.zeros(6)
    q[2] = 0.5
    with pytest.raises(JointLimitError, match="joint 3 \\(insertion\\)"):
        forward_kinematics(MODEL, q)


def test_model_rejects_tip_behind_rcm():
    with pytest.raises(ValueError, match="RCM"):
        KinematicModel(limits=((-1, 1), (-1, 1), (-0.2, 0.1), (-1, 1), (-1, 1), (-1, 1)))
    with pytest.raises(ValueError, match="positive"):
        KinematicModel(yaw_to_tip=0.0)


def test_prismatic_column_is_shaft_axis():
    q = np.array([0.2, 0.1, 0.02, -0.5, 0.3, 0.1])
    J = jacobian(MODEL, q)
    np.testing.assert_allclose(J[:3, 2], chain(MODEL, q).shaft_axis)
    np.testing.assert_array_equal(J[3:, 2], np.zeros(3))


@settings(max_examples=60, deadline=None)
@given(configs())
def test_jacobian_matches_central_differences(q):
    lo, hi = MODEL.lower + 1e-5, MODEL.upper - 1e-5
    q = np.clip(q, lo, hi)
    J = jacobian(MODEL, q)
    h = 1e-6
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        fd = pose_error(forward_kinematics(MODEL, q - e), forward_kinematics(MODEL, q + e)) / 2
        assert np.linalg.norm(J[:, i] * h - fd) / h < 1e-5


def test_wrist_singularity_with_coincident_axes():
    m = KinematicModel(pitch_to_yaw=0.0)
    J = jacobian(m, [0.3, 0.2, 0.01, 0.5, np.pi / 2, 0.4])
    assert np.linalg.svd(J, compute_uv=False)[-1] < 1e-6
    assert condition_number(J) == np.inf


def test_condition_number_cases():
    assert condition_number(np.eye(6)) == pytest.approx(1.0)
    assert condition_number(np.diag([2.0, 1, 1, 1, 1, 1])) == pytest.approx(2.0)
    A = np.eye(6)
    A[5, 5] = 0.0
    assert condition_number(A) == np.inf


def test_random_configuration_respects_margin():
    rng = np.random.default_rng(0)
    q = np.array([random_configuration(MODEL, rng, margin=0.1) for _ in range(200)])
    span = MODEL.upper - MODEL.lower
    assert np.all(q >= MODEL.lower + 0.1 * span) and np.all(q <= MODEL.upper - 0.1 * span)


def test_from_config_overrides():
    m = KinematicModel.from_config({"nominal_depth": 0.1, "limits": [[-1, 1]] * 2 + [[-0.05, 0.05]] + [[-1, 1]] * 3})
    assert m.nominal_depth == 0.1 and m.limits[2] == (-0.05, 0.05)
