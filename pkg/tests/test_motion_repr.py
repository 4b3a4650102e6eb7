"""Codec tests: rotation round trips, encode/recover inversion, foot
contacts, root integration, projection, and the binary file formats."""

import numpy as np
import pytest

from mlat import motion_repr as mr
from mlat import synth_data as sd
from mlat.errors import DegenerateRotation, MlatError


def random_rotation(rng):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return mr.axis_angle_to_matrix(axis, rng.uniform(-np.pi, np.pi))


# ---------------------------------------------------------------------------
# 6D rotations


def test_rot6d_identity():
    np.testing.assert_allclose(
        mr.rot6d_to_matrix(np.array([1., 0., 0., 0., 1., 0.])), np.eye(3))
    np.testing.assert_allclose(
        mr.matrix_to_rot6d(np.eye(3)), [1., 0., 0., 0., 1., 0.])


def test_rot6d_90_degrees_about_z():
    Rz = mr.axis_angle_to_matrix(np.array([0., 0., 1.]), np.pi / 2)
    np.testing.assert_allclose(mr.matrix_to_rot6d(Rz), [0., 1., 0., -1., 0., 0.],
                               atol=1e-15)


def test_rot6d_round_trip_random_rotations():
    rng = np.random.default_rng(0)
    for _ in range(100):
        R = random_rotation(rng)
        R2 = mr.rot6d_to_matrix(mr.matrix_to_rot6d(R))
        assert np.max(np.abs(R - R2)) < 1e-9
        np.testing.assert_allclose(R2.T @ R2, np.eye(3), atol=1e-9)
        assert abs(np.linalg.det(R2) - 1.0) < 1e-9


def test_rot6d_output_always_orthonormal():
    rng = np.random.default_rng(1)
    r6 = rng.normal(size=(50, 6))
    R = mr.rot6d_to_matrix(r6)
    gram = np.swapaxes(R, -1, -2) @ R
    assert np.max(np.abs(gram - np.eye(3))) < 1e-9
    np.testing.assert_allclose(np.linalg.det(R), 1.0, atol=1e-9)


def test_rot6d_degenerate_inputs_raise():
    with pytest.raises(DegenerateRotation):
        mr.rot6d_to_matrix(np.zeros(6))
    with pytest.raises(DegenerateRotation):
        mr.rot6d_to_matrix(np.array([1., 0., 0., 2., 0., 0.]))
    with pytest.raises(DegenerateRotation):
        mr.matrix_to_rot6d(np.eye(3) * 2.0)


# ---------------------------------------------------------------------------
# layout


def test_layout_widths_sum_to_269():
    widths = [s.stop - s.start for s in mr.LAYOUT.values()]
    assert widths == [3, 1, 63, 126, 66, 4, 6]
    assert sum(widths) == 269
    assert mr.GLOBAL_ORI6.stop == mr.RAW_DIM


def test_first_263_dims_independent_of_orientation_tail():
    joints, rots = sd.gen_motion(sd.class_defaults("walk"), 32, seed=5)
    feats = mr.encode_repr(joints, rots, mr.default_skeleton())
    zeroed = feats.copy()
    zeroed[:, mr.GLOBAL_ORI6] = 0.0
    np.testing.assert_array_equal(feats[:, :263], zeroed[:, :263])


# ---------------------------------------------------------------------------
# encode / recover


def static_pose(T=24):
    skeleton = mr.default_skeleton()
    rots = np.zeros((T, 22, 3, 3))
    rots[:] = np.eye(3)
    root = np.zeros((T, 3))
    root[:, 1] = skeleton.offsets[0, 1]
    joints = mr.forward_kinematics(rots, root, skeleton)
    return joints, rots, skeleton


def test_encode_static_pose():
    joints, rots, skeleton = static_pose()
    feats = mr.encode_repr(joints, rots, skeleton)
    np.testing.assert_allclose(feats[:, mr.ROOT_INC], 0.0, atol=1e-12)
    np.testing.assert_allclose(feats[:, mr.JOINT_VEL], 0.0, atol=1e-12)
    np.testing.assert_array_equal(feats[:, mr.FOOT_CONTACT], 1.0)


def test_encode_forward_translation_increment():
    joints, rots, skeleton = static_pose(T=40)
    shift = np.arange(40)[:, None] * 0.05   # 1 m/s at 20 fps
    moving = joints.copy()
    moving[:, :, 2] += shift
    feats = mr.encode_repr(moving, rots, skeleton)
    inc = feats[:, mr.ROOT_INC]
    np.testing.assert_allclose(np.hypot(inc[:, 1], inc[:, 2]), 0.05, atol=1e-12)


def test_recover_zero_increments_constant_height():
    feats = np.zeros((10, mr.RAW_DIM))
    feats[:, 3] = 0.87
    joints = mr.recover_joints(feats, mr.default_skeleton())
    np.testing.assert_allclose(joints[:, 0], np.tile([0.0, 0.87, 0.0], (10, 1)),
                               atol=1e-12)


def test_round_trip_on_synthetic_walks():
    skeleton = mr.default_skeleton()
    rng = np.random.default_rng(7)
    for tag in sd.CLASS_TAGS:
        for _ in range(4):
            mc = sd.sample_motion_class(tag, rng)
            joints, rots = sd.gen_motion(mc, 48, seed=int(rng.integers(1 << 31)))
            feats = mr.encode_repr(joints, rots, skeleton)
            rec = mr.recover_joints(feats, skeleton)
            mpjpe = np.linalg.norm(rec - joints, axis=-1).mean()
            assert mpjpe < 1e-4, f"{tag}: round-trip MPJPE {mpjpe}"


def test_encode_recover_yaw_equivariance():
    skeleton = mr.default_skeleton()
    joints, rots = sd.gen_motion(sd.class_defaults("walk"), 32, seed=11)
    alpha = 0.9
    R = mr.rotation_about_y(alpha)
    joints_rot = joints @ R.T
    rots_rot = rots.copy()
    rots_rot[:, 0] = R @ rots[:, 0]
    rec = mr.recover_joints(mr.encode_repr(joints_rot, rots_rot, skeleton), skeleton)
    expect = mr.recover_joints(mr.encode_repr(joints, rots, skeleton), skeleton) @ R.T
    assert np.max(np.abs(rec - expect)) < 1e-6


def test_encode_rejects_short_or_nan_input():
    joints, rots, skeleton = static_pose(T=24)
    with pytest.raises(MlatError):
        mr.encode_repr(joints[:1], rots[:1], skeleton)
    bad = joints.copy()
    bad[3, 5, 1] = np.nan
    with pytest.raises(MlatError):
        mr.encode_repr(bad, rots, skeleton)


def test_recover_rejects_malformed_width():
    with pytest.raises(MlatError):
        mr.recover_joints(np.zeros((5, 100)), mr.default_skeleton())


# ---------------------------------------------------------------------------
# foot contacts


def test_foot_contacts_static_all_ones():
    joints, _, skeleton = static_pose()
    np.testing.assert_array_equal(
        mr.detect_foot_contacts(joints, skeleton), np.ones((24, 4)))


def test_foot_contacts_airborne_phase():
    joints, _, skeleton = static_pose(T=30)
    hop = joints.copy()
    # triangular flight profile: foot speed 0.08 m/frame throughout, far
    # above the contact threshold, with no stationary apex
    lift = np.zeros(30)
    lift[10:15] = 0.08 * np.arange(1, 6)
    lift[15:20] = 0.4 - 0.08 * np.arange(1, 6)
    hop[:, :, 1] += lift[:, None]
    contacts = mr.detect_foot_contacts(hop, skeleton)
    assert np.all(contacts[9:19] == 0.0)
    assert np.all(contacts[:9] == 1.0)
    assert np.all(contacts[20:] == 1.0)
    assert set(np.unique(contacts)) <= {0.0, 1.0}


def test_foot_contacts_translation_invariant():
    joints, _, skeleton = static_pose(T=30)
    rng = np.random.default_rng(3)
    wiggle = joints + 0.002 * rng.normal(size=joints.shape)
    shifted = wiggle + np.array([5.0, 0.3, -2.0])
    np.testing.assert_array_equal(mr.detect_foot_contacts(wiggle, skeleton),
                                  mr.detect_foot_contacts(shifted, skeleton))


# ---------------------------------------------------------------------------
# root integration


def test_integrate_root_zero_increments():
    out = mr.integrate_root(np.zeros((8, 3)), initial_yaw=0.3, initial_pos=(1., 2.))
    np.testing.assert_allclose(out, np.tile([0.3, 1.0, 2.0], (8, 1)))


def test_integrate_root_full_turn():
    T = 48
    inc = np.zeros((T, 3))
    inc[:, 0] = 2 * np.pi / T
    out = mr.integrate_root(inc, initial_yaw=0.1)
    final = np.arctan2(np.sin(out[-1, 0] - 0.1), np.cos(out[-1, 0] - 0.1))
    assert abs(final) < 1e-9


def test_integrate_root_straight_line():
    T = 25
    inc = np.zeros((T, 3))
    inc[:, 2] = 0.05
    out = mr.integrate_root(inc)
    np.testing.assert_allclose(out[-1], [0.0, 0.0, T * 0.05], atol=1e-12)


# ---------------------------------------------------------------------------
# weak perspective


def test_project_orthographic_drop():
    pts = np.arange(66, dtype=float).reshape(22, 3)
    out = mr.project_weak_perspective(pts, scale=1.0, translation=(0.0, 0.0))
    np.testing.assert_array_equal(out, pts[:, :2])


def test_project_scale_linearity():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(22, 3))
    one = mr.project_weak_perspective(pts, 1.0, (0.0, 0.0))
    two = mr.project_weak_perspective(pts, 2.0, (0.0, 0.0))
    np.testing.assert_allclose(two, 2.0 * one)


def test_project_hand_computed():
    pts = np.zeros((22, 3))
    pts[0] = [0.5, -0.25, 3.0]
    out = mr.project_weak_perspective(pts, scale=100.0, translation=(32.0, 16.0))
    np.testing.assert_allclose(out[0], [82.0, -9.0])
    with pytest.raises(MlatError):
        mr.project_weak_perspective(pts, scale=0.0, translation=(0, 0))


# ---------------------------------------------------------------------------
# standardization and files


def test_channel_stats_round_trip():
    rng = np.random.default_rng(5)
    seqs = [rng.normal(loc=2.0, size=(30, mr.RAW_DIM)) for _ in range(4)]
    stats = mr.ChannelStats.from_corpus(seqs)
    z = stats.apply(seqs[0])
    np.testing.assert_allclose(stats.invert(z), seqs[0], atol=1e-10)
    assert np.all(stats.std >= 1e-4)


def test_m269_and_jnt3_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    feats = rng.normal(size=(17, mr.RAW_DIM))
    mr.save_m269(tmp_path / "a.m269", feats)
    np.testing.assert_array_equal(mr.load_m269(tmp_path / "a.m269"), feats)

    joints = rng.normal(size=(9, 22, 3))
    mr.save_jnt3(tmp_path / "a.jnt3", joints)
    np.testing.assert_array_equal(mr.load_jnt3(tmp_path / "a.jnt3"), joints)

    with open(tmp_path / "a.m269", "rb") as f:
        assert f.read(4) == b"M269"
    with pytest.raises(MlatError):
        mr.load_m269(tmp_path / "a.jnt3")
