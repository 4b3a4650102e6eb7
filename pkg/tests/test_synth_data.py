"""Generator tests: determinism, kinematic plausibility, class
separability, spectral content, and feature-map rendering."""

import numpy as np
import pytest

from mlat import motion_repr as mr
from mlat import synth_data as sd
from mlat.errors import MlatError


def test_gen_motion_deterministic():
    mc = sd.class_defaults("walk")
    a_j, a_r = sd.gen_motion(mc, 40, seed=123)
    b_j, b_r = sd.gen_motion(mc, 40, seed=123)
    assert a_j.tobytes() == b_j.tobytes()
    assert a_r.tobytes() == b_r.tobytes()
    c_j, _ = sd.gen_motion(mc, 40, seed=124)
    assert a_j.tobytes() != c_j.tobytes()


def test_gen_motion_rejects_short_sequences():
    with pytest.raises(MlatError):
        sd.gen_motion(sd.class_defaults("walk"), 8, seed=0)


def test_bone_lengths_constant():
    skeleton = mr.default_skeleton()
    for tag in sd.CLASS_TAGS:
        joints, _ = sd.gen_motion(sd.class_defaults(tag), 32, seed=9)
        lengths = sd.bone_lengths(joints, skeleton)
        drift = np.max(np.abs(lengths - lengths[0]))
        assert drift < 1e-9, f"{tag}: bone drift {drift}"


def test_walk_root_speed_matches_configuration():
    mc = sd.MotionClass("walk", amplitude=1.0, frequency=1.5, speed=1.3)
    joints, _ = sd.gen_motion(mc, 60, seed=4)
    planar = joints[:, 0][:, [0, 2]]
    speeds = np.linalg.norm(np.diff(planar, axis=0), axis=-1) * mr.FPS
    np.testing.assert_allclose(speeds, 1.3, atol=1e-6)


def test_class_separability_nearest_centroid():
    samples = sd.build_corpus(sd.CLASS_TAGS, per_class=100, frames=32, seed=77)
    assert len(samples) == 300
    centroids = sd.class_centroids(samples)
    hits = sum(
        sd.nearest_centroid(sd.sequence_feature(s.features), centroids) == s.tag
        for s in samples)
    assert hits == 300


def test_wave_wrist_dominant_frequency_bin():
    for freq in (1.0, 2.0, 3.0):
        mc = sd.MotionClass("wave", amplitude=0.5, frequency=freq)
        joints, _ = sd.gen_motion(mc, 80, seed=2)
        wrist = joints[:, 21, 0]          # right wrist, lateral axis
        spec = np.abs(np.fft.rfft(wrist - wrist.mean()))
        freqs = np.fft.rfftfreq(len(wrist), d=1.0 / mr.FPS)
        dominant = freqs[np.argmax(spec)]
        bin_width = freqs[1] - freqs[0]
        assert abs(dominant - freq) <= bin_width + 1e-12


def test_motion_class_validation():
    with pytest.raises(MlatError):
        sd.MotionClass("walk", frequency=12.0)
    with pytest.raises(MlatError):
        sd.MotionClass("sprint")


# ---------------------------------------------------------------------------
# feature maps


def test_feature_map_peak_at_joint_pixel():
    joints2d = np.tile([10.0, 20.0], (22, 1))
    joints2d[5] = [7.25, 12.5]
    fm = sd.render_feature_map(joints2d, channels=22, height=32, width=32, sigma=2.0)
    # integer-coordinate joints peak at exactly 1
    assert fm[0, 20, 10] == 1.0
    # sub-pixel joints match the Gaussian evaluated at the nearest grid point
    expect = np.exp(-(0.25**2 + 0.5**2) / (2 * 2.0**2))
    assert abs(fm[5, 12, 7] - expect) < 1e-12
    assert abs(fm[5, 12, 7] - 1.0) < 5e-3 * 10  # still near peak


def test_feature_map_decay_far_from_joints():
    joints2d = np.tile([16.0, 16.0], (22, 1))
    fm = sd.render_feature_map(joints2d, channels=4, height=64, width=64, sigma=1.5)
    # corner is ~45 pixels away, far beyond 6 sigma
    assert fm[:, 63, 63].max() < 1e-6


def test_feature_map_translation_shifts_argmax():
    rng = np.random.default_rng(0)
    joints2d = rng.uniform(8, 16, size=(22, 2))
    fm1 = sd.render_feature_map(joints2d, 22, 40, 40, sigma=1.0)
    fm2 = sd.render_feature_map(joints2d + 5.0, 22, 40, 40, sigma=1.0)
    for c in range(22):
        a1 = np.unravel_index(np.argmax(fm1[c]), fm1[c].shape)
        a2 = np.unravel_index(np.argmax(fm2[c]), fm2[c].shape)
        assert (a2[0] - a1[0], a2[1] - a1[1]) == (5, 5)


def test_feature_map_channel_wraps_mod_22():
    joints2d = np.zeros((22, 2))
    joints2d[:, 0] = np.arange(22)
    fm = sd.render_feature_map(joints2d, channels=32, height=8, width=32, sigma=1.0)
    np.testing.assert_array_equal(fm[22], fm[0])
    np.testing.assert_array_equal(fm[31], fm[9])
    with pytest.raises(MlatError):
        sd.render_feature_map(joints2d, 4, 8, 8, sigma=0.0)


def test_feature_map_deterministic():
    joints2d = np.tile([3.0, 4.0], (22, 1))
    a = sd.render_feature_map(joints2d, 8, 16, 16, 1.0)
    b = sd.render_feature_map(joints2d, 8, 16, 16, 1.0)
    assert a.tobytes() == b.tobytes()


# ---------------------------------------------------------------------------
# corpus


def test_corpus_write_load_round_trip(tmp_path):
    samples = sd.build_corpus(("walk", "wave"), per_class=3, frames=24, seed=5)
    manifest = sd.write_corpus(samples, tmp_path / "corpus", config_hash="abc123")
    text = manifest.read_text()
    assert text.startswith("# config_hash=abc123")
    assert len([l for l in text.splitlines() if "," in l and not l.startswith(("#", "class"))]) == 6

    loaded = sd.load_corpus(tmp_path / "corpus")
    assert sd.corpus_digest(loaded) == sd.corpus_digest(samples)


def test_corpus_deterministic():
    a = sd.build_corpus(sd.CLASS_TAGS, 2, 24, seed=3)
    b = sd.build_corpus(sd.CLASS_TAGS, 2, 24, seed=3)
    assert sd.corpus_digest(a) == sd.corpus_digest(b)
