"""Procedural motion corpus and synthetic visual feature maps.

Three parameterized motion families (walk, wave, squat) are posed through
forward kinematics, so bone lengths are exact by construction and every
sample is reproducible from (class, frames, seed). Feature maps replace
pretrained image backbones with Gaussian joint heatmaps rendered at
projected 2D joint locations.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import motion_repr as mr
from .errors import MlatError

CLASS_TAGS = ("walk", "wave", "squat")


@dataclass(frozen=True)
class MotionClass:
    tag: str
    amplitude: float = 1.0   # scales joint excursions
    frequency: float = 1.5   # Hz, must stay below the 10 Hz Nyquist limit
    phase: float = 0.0       # rad
    speed: float = 1.0       # m/s forward root speed (walk only)

    def __post_init__(self):
        if self.tag not in CLASS_TAGS:
            raise MlatError(f"unknown motion class {self.tag!r}")
        if not (0.0 < self.frequency < 10.0):
            raise MlatError("frequency must be in (0, 10) Hz")


_DEFAULTS = {
    "walk": MotionClass("walk", amplitude=1.0, frequency=1.5, speed=1.0),
    "wave": MotionClass("wave", amplitude=0.5, frequency=2.0, speed=0.0),
    "squat": MotionClass("squat", amplitude=1.0, frequency=0.8, speed=0.0),
}


def class_defaults(tag: str) -> MotionClass:
    if tag not in _DEFAULTS:
        raise MlatError(f"unknown motion class {tag!r}")
    return _DEFAULTS[tag]


def sample_motion_class(tag: str, rng: np.random.Generator) -> MotionClass:
    """Jitter the class defaults to diversify the corpus."""
    base = class_defaults(tag)
    return replace(
        base,
        amplitude=base.amplitude * rng.uniform(0.8, 1.2),
        frequency=base.frequency * rng.uniform(0.85, 1.15),
        phase=rng.uniform(0.0, 2.0 * np.pi),
        speed=base.speed * rng.uniform(0.8, 1.2),
    )


def _identity_rots(T: int, J: int) -> np.ndarray:
    rots = np.zeros((T, J, 3, 3))
    rots[:] = np.eye(3)
    return rots


_X = np.array([1.0, 0.0, 0.0])
_Z = np.array([0.0, 0.0, 1.0])


def gen_motion(mc: MotionClass, T: int, seed: int,
               skeleton: mr.SkeletonDef | None = None):
    """Generate one labeled motion: returns (joints (T,22,3), local rotations).

    Deterministic in (mc, T, seed); the seed adds small constant per-joint
    pose offsets so samples with equal parameters still differ.
    """
    if T < 16:
        raise MlatError("gen_motion needs at least 16 frames")
    skeleton = skeleton or mr.default_skeleton()
    rng = np.random.default_rng(seed)
    t = np.arange(T) / mr.FPS
    w = 2.0 * np.pi * mc.frequency
    ph = w * t + mc.phase
    a = mc.amplitude

    rots = _identity_rots(T, skeleton.joint_count)
    root = np.zeros((T, 3))
    root[:, 1] = skeleton.offsets[0, 1]

    if mc.tag == "walk":
        root[:, 2] = mc.speed * t
        root[:, 1] += 0.015 * a * np.sin(2.0 * ph)
        swing = 0.45 * a * np.sin(ph)
        rots[:, 1] = mr.axis_angle_to_matrix(_X, swing)
        rots[:, 2] = mr.axis_angle_to_matrix(_X, -swing)
        knee = 0.35 * a * (1.0 - np.cos(ph)) / 2.0
        rots[:, 4] = mr.axis_angle_to_matrix(_X, knee)
        rots[:, 5] = mr.axis_angle_to_matrix(_X, 0.35 * a * (1.0 + np.cos(ph)) / 2.0)
        arm = 0.30 * a * np.sin(ph)
        rots[:, 16] = mr.axis_angle_to_matrix(_X, -arm)
        rots[:, 17] = mr.axis_angle_to_matrix(_X, arm)
    elif mc.tag == "wave":
        rots[:, 17] = mr.axis_angle_to_matrix(_Z, np.full(T, -0.45 * np.pi))
        rots[:, 19] = mr.axis_angle_to_matrix(_Z, a * np.sin(ph))
        rots[:, 16] = mr.axis_angle_to_matrix(_Z, np.full(T, 0.15 * np.pi * a))
    elif mc.tag == "squat":
        descent = 0.22 * a * (1.0 - np.cos(ph)) / 2.0
        root[:, 1] -= descent
        bend = descent / 0.22 if a == 0 else descent / (0.22 * a)
        hip = -0.9 * a * bend
        knee = 1.4 * a * bend
        rots[:, 1] = mr.axis_angle_to_matrix(_X, hip)
        rots[:, 2] = mr.axis_angle_to_matrix(_X, hip)
        rots[:, 4] = mr.axis_angle_to_matrix(_X, knee)
        rots[:, 5] = mr.axis_angle_to_matrix(_X, knee)
        rots[:, 16] = mr.axis_angle_to_matrix(_X, -0.4 * a * bend)
        rots[:, 17] = mr.axis_angle_to_matrix(_X, -0.4 * a * bend)

    # constant per-sample pose variation on the spine and head
    for j in (3, 6, 9, 12, 15):
        rots[:, j] = rots[:, j] @ mr.axis_angle_to_matrix(
            _X, np.full(T, 0.02 * rng.standard_normal()))

    joints = mr.forward_kinematics(rots, root, skeleton)
    return joints, rots


def bone_lengths(joints: np.ndarray, skeleton: mr.SkeletonDef) -> np.ndarray:
    """(T, 21) distances from each non-root joint to its parent."""
    parents = skeleton.parents[1:]
    return np.linalg.norm(joints[:, 1:] - joints[:, parents], axis=-1)


# ---------------------------------------------------------------------------
# synthetic visual feature maps


def render_feature_map(joints2d: np.ndarray, channels: int, height: int,
                       width: int, sigma: float) -> np.ndarray:
    """(C, H, W) map; channel c is a unit-peak Gaussian at joint (c mod 22)."""
    if sigma <= 0:
        raise MlatError("sigma must be positive")
    joints2d = np.asarray(joints2d, dtype=np.float64)
    ys, xs = np.mgrid[0:height, 0:width]
    out = np.empty((channels, height, width))
    J = joints2d.shape[0]
    for c in range(channels):
        jx, jy = joints2d[c % J]
        out[c] = np.exp(-((xs - jx) ** 2 + (ys - jy) ** 2) / (2.0 * sigma ** 2))
    return out


# ---------------------------------------------------------------------------
# corpus on disk


@dataclass
class CorpusSample:
    tag: str
    seed: int
    frames: int
    features: np.ndarray    # (T, 269)


def _sample_seed(base_seed: int, class_index: int, sample_index: int) -> int:
    return base_seed * 1_000_000 + class_index * 10_000 + sample_index


def build_corpus(classes, per_class: int, frames: int, seed: int,
                 skeleton: mr.SkeletonDef | None = None) -> list[CorpusSample]:
    """Generate the corpus in memory, deterministic from the seed."""
    skeleton = skeleton or mr.default_skeleton()
    samples = []
    for ci, tag in enumerate(classes):
        for i in range(per_class):
            s = _sample_seed(seed, ci, i)
            rng = np.random.default_rng(s)
            mc = sample_motion_class(tag, rng)
            joints, rots = gen_motion(mc, frames, s + 1, skeleton)
            feats = mr.encode_repr(joints, rots, skeleton)
            samples.append(CorpusSample(tag=tag, seed=s, frames=frames,
                                        features=feats))
    return samples


def write_corpus(samples: list[CorpusSample], out_dir, config_hash: str = "") -> Path:
    """Lay out `corpus/<class>/<seed>.m269` plus a manifest file."""
    out_dir = Path(out_dir)
    lines = []
    for s in samples:
        d = out_dir / s.tag
        d.mkdir(parents=True, exist_ok=True)
        mr.save_m269(d / f"{s.seed}.m269", s.features)
        lines.append(f"{s.tag},{s.seed},{s.frames}")
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w") as f:
        if config_hash:
            f.write(f"# config_hash={config_hash}\n")
        f.write("class,seed,frames\n")
        f.write("\n".join(lines) + "\n")
    return manifest


def load_corpus(corpus_dir) -> list[CorpusSample]:
    corpus_dir = Path(corpus_dir)
    manifest = corpus_dir / "manifest.csv"
    if not manifest.exists():
        raise MlatError(f"no manifest at {manifest}")
    samples = []
    for line in manifest.read_text().splitlines():
        if not line or line.startswith("#") or line.startswith("class,"):
            continue
        tag, seed, frames = line.split(",")
        feats = mr.load_m269(corpus_dir / tag / f"{seed}.m269")
        samples.append(CorpusSample(tag=tag, seed=int(seed), frames=int(frames),
                                    features=feats))
    return samples


def corpus_digest(samples: list[CorpusSample]) -> str:
    h = hashlib.sha256()
    for s in samples:
        h.update(s.tag.encode())
        h.update(np.ascontiguousarray(s.features).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# nearest-centroid classification over per-sequence feature means


def sequence_feature(feats: np.ndarray) -> np.ndarray:
    """Per-sequence summary: mean over frames of the 269-dim features."""
    return np.asarray(feats).mean(axis=0)


def class_centroids(samples: list[CorpusSample]) -> dict[str, np.ndarray]:
    sums: dict[str, list] = {}
    for s in samples:
        sums.setdefault(s.tag, []).append(sequence_feature(s.features))
    return {tag: np.mean(v, axis=0) for tag, v in sums.items()}


def nearest_centroid(feature: np.ndarray, centroids: dict[str, np.ndarray]) -> str:
    tags = sorted(centroids)
    dists = [np.linalg.norm(feature - centroids[t]) for t in tags]
    return tags[int(np.argmin(dists))]
