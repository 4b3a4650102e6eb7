"""The unified 269-dim per-frame motion representation.

Feature layout (widths sum to 269; the first 263 match the conventional
motion-generation representation, the 6-dim tail adds absolute global
orientation):

    [0, 3)     root increment: yaw delta, planar (x, z) translation delta,
               expressed in the current root frame, per-frame units
    [3, 4)     root height (m)
    [4, 67)    root-frame-local positions of joints 1..21 (21 x 3)
    [67, 193)  local joint rotations of joints 1..21, continuous 6D (21 x 6)
    [193, 259) joint velocities in the root frame (22 x 3, m/frame)
    [259, 263) foot contact states, {0, 1}
    [263, 269) global root orientation, continuous 6D

Also provides 6D rotation utilities, forward kinematics, weak-perspective
projection, per-channel standardization, and the M269 / JNT3 file formats.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRotation, MlatError

FPS = 20.0
JOINT_COUNT = 22
RAW_DIM = 269

ROOT_INC = slice(0, 3)
ROOT_HEIGHT = slice(3, 4)
REL_POS = slice(4, 67)
LOCAL_ROT6 = slice(67, 193)
JOINT_VEL = slice(193, 259)
FOOT_CONTACT = slice(259, 263)
GLOBAL_ORI6 = slice(263, 269)

LAYOUT = {
    "root_increment": ROOT_INC,
    "root_height": ROOT_HEIGHT,
    "relative_positions": REL_POS,
    "local_rotations_6d": LOCAL_ROT6,
    "joint_velocities": JOINT_VEL,
    "foot_contacts": FOOT_CONTACT,
    "global_orientation_6d": GLOBAL_ORI6,
}

# squared foot-joint displacement (m^2/frame^2) below which a foot counts
# as planted
FOOT_CONTACT_THRESHOLD = 2e-3


@dataclass(frozen=True)
class SkeletonDef:
    """22-joint skeleton: parent tree, rest offsets, and foot joints."""

    parents: np.ndarray          # (22,) int, parents[0] == 0
    offsets: np.ndarray          # (22, 3) m, offset from parent in rest pose
    foot_indices: tuple          # (left ankle, left toe, right ankle, right toe)

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    def children_of(self, joint: int) -> list:
        return [j for j in range(1, self.joint_count) if self.parents[j] == joint]


_PARENTS = np.array([0, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8,
                     9, 9, 9, 12, 13, 14, 16, 17, 18, 19])

_OFFSETS = np.array([
    [0.000,  0.920,  0.000],   # 0 pelvis (rest height above ground)
    [0.110, -0.040,  0.000],   # 1 left hip
    [-0.110, -0.040,  0.000],  # 2 right hip
    [0.000,  0.130,  0.000],   # 3 spine1
    [0.000, -0.390,  0.000],   # 4 left knee
    [0.000, -0.390,  0.000],   # 5 right knee
    [0.000,  0.140,  0.000],   # 6 spine2
    [0.000, -0.400,  0.000],   # 7 left ankle
    [0.000, -0.400,  0.000],   # 8 right ankle
    [0.000,  0.060,  0.000],   # 9 spine3
    [0.000, -0.060,  0.140],   # 10 left toe
    [0.000, -0.060,  0.140],   # 11 right toe
    [0.000,  0.210,  0.000],   # 12 neck
    [0.080,  0.120,  0.000],   # 13 left collar
    [-0.080,  0.120,  0.000],  # 14 right collar
    [0.000,  0.140,  0.000],   # 15 head
    [0.130,  0.020,  0.000],   # 16 left shoulder
    [-0.130,  0.020,  0.000],  # 17 right shoulder
    [0.000, -0.270,  0.000],   # 18 left elbow
    [0.000, -0.270,  0.000],   # 19 right elbow
    [0.000, -0.250,  0.000],   # 20 left wrist
    [0.000, -0.250,  0.000],   # 21 right wrist
])

LEFT_HIP, RIGHT_HIP = 1, 2


def default_skeleton() -> SkeletonDef:
    """Humanoid skeleton in the 22-joint convention, rest pose facing +z."""
    return SkeletonDef(parents=_PARENTS.copy(), offsets=_OFFSETS.copy(),
                       foot_indices=(7, 10, 8, 11))


# ---------------------------------------------------------------------------
# rotations


def rot6d_to_matrix(r6: np.ndarray) -> np.ndarray:
    """Gram-Schmidt a (..., 6) continuous rotation back to (..., 3, 3)."""
    r6 = np.asarray(r6, dtype=np.float64)
    c1 = r6[..., 0:3]
    c2 = r6[..., 3:6]
    n1 = np.linalg.norm(c1, axis=-1, keepdims=True)
    if np.any(n1 < 1e-8):
        raise DegenerateRotation("first 6D column has (near-)zero norm")
    b1 = c1 / n1
    c2p = c2 - np.sum(b1 * c2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(c2p, axis=-1, keepdims=True)
    if np.any(n2 < 1e-8):
        raise DegenerateRotation("6D columns are (near-)parallel")
    b2 = c2p / n2
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(R: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """First two matrix columns, column-major; validates orthonormality."""
    R = np.asarray(R, dtype=np.float64)
    gram = np.swapaxes(R, -1, -2) @ R
    eye = np.eye(3)
    if np.max(np.abs(gram - eye)) > tol or np.any(np.linalg.det(R) < 1.0 - tol):
        raise DegenerateRotation("input is not a rotation matrix within tolerance")
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def rotation_about_y(yaw) -> np.ndarray:
    """(...,) yaw angles to (..., 3, 3) rotations about the vertical axis."""
    yaw = np.asarray(yaw, dtype=np.float64)
    c, s = np.cos(yaw), np.sin(yaw)
    z = np.zeros_like(c)
    o = np.ones_like(c)
    return np.stack([
        np.stack([c, z, s], axis=-1),
        np.stack([z, o, z], axis=-1),
        np.stack([-s, z, c], axis=-1),
    ], axis=-2)


def yaw_from_matrix(R: np.ndarray) -> np.ndarray:
    """Heading angle: atan2 of the forward (+z) vector's XZ projection."""
    R = np.asarray(R, dtype=np.float64)
    fwd = R[..., :, 2]
    return np.arctan2(fwd[..., 0], fwd[..., 2])


def axis_angle_to_matrix(axis, angle) -> np.ndarray:
    """Rodrigues rotation for a fixed unit axis and (...,) angles."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    angle = np.asarray(angle, dtype=np.float64)
    kx, ky, kz = axis
    K = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    s = np.sin(angle)[..., None, None]
    c = np.cos(angle)[..., None, None]
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def rotation_between(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Minimal (twist-free) rotation taking unit vector u to unit vector v."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u = u / np.linalg.norm(u)
    v = v / np.linalg.norm(v)
    axis = np.cross(u, v)
    s = np.linalg.norm(axis)
    c = float(np.dot(u, v))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: rotate pi about any axis orthogonal to u
        helper = np.array([1.0, 0.0, 0.0])
        if abs(u[0]) > 0.9:
            helper = np.array([0.0, 1.0, 0.0])
        axis = np.cross(u, helper)
        axis /= np.linalg.norm(axis)
        return axis_angle_to_matrix(axis, np.pi)
    return axis_angle_to_matrix(axis / s, np.arctan2(s, c))


# ---------------------------------------------------------------------------
# kinematics


def forward_kinematics(local_rots: np.ndarray, root_pos: np.ndarray,
                       skeleton: SkeletonDef) -> np.ndarray:
    """Pose the skeleton: (T, 22, 3, 3) local rotations + (T, 3) root -> (T, 22, 3)."""
    T = local_rots.shape[0]
    J = skeleton.joint_count
    glob = np.empty((T, J, 3, 3))
    pos = np.empty((T, J, 3))
    glob[:, 0] = local_rots[:, 0]
    pos[:, 0] = root_pos
    for j in range(1, J):
        par = int(skeleton.parents[j])
        glob[:, j] = glob[:, par] @ local_rots[:, j]
        pos[:, j] = pos[:, par] + np.einsum("tab,b->ta", glob[:, par],
                                            skeleton.offsets[j])
    return pos


def derive_local_rotations(joints: np.ndarray, skeleton: SkeletonDef) -> np.ndarray:
    """Approximate local rotations from positions by aligning bone directions.

    Positions under-determine twist, so this is twist-free: each joint gets
    the minimal rotation taking its rest-pose bone to the observed bone
    (first child only); leaves inherit their parent's orientation. The root
    is yaw-only, from the hip line.
    """
    T = joints.shape[0]
    J = skeleton.joint_count
    glob = np.empty((T, J, 3, 3))
    across = joints[:, RIGHT_HIP] - joints[:, LEFT_HIP]
    fwd = np.cross(np.array([0.0, 1.0, 0.0]), across)
    yaw = np.arctan2(fwd[:, 0], fwd[:, 2])
    glob[:, 0] = rotation_about_y(yaw)
    first_child = {}
    for j in range(J):
        kids = skeleton.children_of(j)
        if kids:
            first_child[j] = kids[0]
    for j in range(1, J):
        c = first_child.get(j)
        if c is None:
            glob[:, j] = glob[:, int(skeleton.parents[j])]
            continue
        rest = skeleton.offsets[c] / np.linalg.norm(skeleton.offsets[c])
        for t in range(T):
            bone = joints[t, c] - joints[t, j]
            glob[t, j] = rotation_between(rest, bone / np.linalg.norm(bone))
    local = np.empty_like(glob)
    local[:, 0] = glob[:, 0]
    for j in range(1, J):
        par = int(skeleton.parents[j])
        local[:, j] = np.swapaxes(glob[:, par], -1, -2) @ glob[:, j]
    return local


# ---------------------------------------------------------------------------
# codec


def detect_foot_contacts(joints: np.ndarray, skeleton: SkeletonDef,
                         threshold: float = FOOT_CONTACT_THRESHOLD) -> np.ndarray:
    """(T, 4) binary contacts: squared per-frame foot displacement below threshold."""
    if joints.shape[0] < 2:
        raise MlatError("foot contacts need at least 2 frames")
    feet = joints[:, list(skeleton.foot_indices)]
    sq = np.sum(np.diff(feet, axis=0) ** 2, axis=-1)
    contact = (sq < threshold).astype(np.float64)
    return np.concatenate([contact, contact[-1:]], axis=0)


def integrate_root(increments: np.ndarray, initial_yaw: float = 0.0,
                   initial_pos=(0.0, 0.0)) -> np.ndarray:
    """Accumulate (yaw delta, local dx, local dz) rows into (yaw, x, z) states.

    Row t of the output is the state after consuming increments[0..t]; each
    planar delta is rotated by the yaw in effect before its own increment.
    """
    increments = np.asarray(increments, dtype=np.float64)
    T = increments.shape[0]
    yaw_after = initial_yaw + np.cumsum(increments[:, 0])
    yaw_before = np.concatenate([[initial_yaw], yaw_after[:-1]])
    c, s = np.cos(yaw_before), np.sin(yaw_before)
    dx_world = c * increments[:, 1] + s * increments[:, 2]
    dz_world = -s * increments[:, 1] + c * increments[:, 2]
    x = initial_pos[0] + np.cumsum(dx_world)
    z = initial_pos[1] + np.cumsum(dz_world)
    out = np.empty((T, 3))
    out[:, 0] = yaw_after
    out[:, 1] = x
    out[:, 2] = z
    return out


def encode_repr(joints: np.ndarray, local_rots: np.ndarray | None,
                skeleton: SkeletonDef,
                contact_threshold: float = FOOT_CONTACT_THRESHOLD) -> np.ndarray:
    """Encode (T, 22, 3) joints (+ optional local rotations) to (T, 269).

    Emits T frames; the last frame's increment/velocity rows duplicate the
    previous ones so the representation stays the same length as the input.
    """
    joints = np.asarray(joints, dtype=np.float64)
    T = joints.shape[0]
    if T < 2:
        raise MlatError("encode_repr needs at least 2 frames")
    if not np.all(np.isfinite(joints)):
        raise MlatError("encode_repr got non-finite joint positions")
    if local_rots is None:
        local_rots = derive_local_rotations(joints, skeleton)

    root = joints[:, 0]
    root_rot = local_rots[:, 0]
    yaw = yaw_from_matrix(root_rot)
    inv_yaw_rot = np.swapaxes(rotation_about_y(yaw), -1, -2)      # (T, 3, 3)

    out = np.zeros((T, RAW_DIM))

    dyaw = np.arctan2(np.sin(np.diff(yaw)), np.cos(np.diff(yaw)))  # wrap to (-pi, pi]
    droot = np.einsum("tab,tb->ta", inv_yaw_rot[:-1], np.diff(root, axis=0))
    inc = np.stack([dyaw, droot[:, 0], droot[:, 2]], axis=-1)
    out[:-1, ROOT_INC] = inc
    out[-1, ROOT_INC] = inc[-1]

    out[:, ROOT_HEIGHT] = root[:, 1:2]

    rel = np.einsum("tab,tjb->tja", inv_yaw_rot, joints[:, 1:] - root[:, None])
    out[:, REL_POS] = rel.reshape(T, -1)

    rot6 = matrix_to_rot6d(local_rots[:, 1:])
    out[:, LOCAL_ROT6] = rot6.reshape(T, -1)

    vel = np.einsum("tab,tjb->tja", inv_yaw_rot[:-1], np.diff(joints, axis=0))
    out[:-1, JOINT_VEL] = vel.reshape(T - 1, -1)
    out[-1, JOINT_VEL] = out[-2, JOINT_VEL]

    out[:, FOOT_CONTACT] = detect_foot_contacts(joints, skeleton, contact_threshold)
    out[:, GLOBAL_ORI6] = matrix_to_rot6d(root_rot)
    return out


def recover_joints(repr_: np.ndarray, skeleton: SkeletonDef,
                   initial_yaw: float | None = None,
                   initial_pos=(0.0, 0.0)) -> np.ndarray:
    """Invert encode_repr back to world-frame joints (positions authoritative).

    The initial yaw defaults to the frame-0 global orientation channel (zero
    when that tail is all zeros); the initial planar position defaults to the
    origin, matching the corpus canonicalization.
    """
    repr_ = np.asarray(repr_, dtype=np.float64)
    if repr_.ndim != 2 or repr_.shape[1] != RAW_DIM:
        raise MlatError(f"malformed feature width {repr_.shape}, expected (T, {RAW_DIM})")
    T = repr_.shape[0]
    if initial_yaw is None:
        tail = repr_[0, GLOBAL_ORI6]
        if np.linalg.norm(tail) < 1e-6:
            initial_yaw = 0.0
        else:
            initial_yaw = float(yaw_from_matrix(rot6d_to_matrix(tail)))

    states = integrate_root(repr_[:, ROOT_INC], initial_yaw, initial_pos)
    yaw = np.concatenate([[initial_yaw], states[:-1, 0]])
    x = np.concatenate([[initial_pos[0]], states[:-1, 1]])
    z = np.concatenate([[initial_pos[1]], states[:-1, 2]])

    root = np.stack([x, repr_[:, 3], z], axis=-1)
    yaw_rot = rotation_about_y(yaw)
    rel = repr_[:, REL_POS].reshape(T, JOINT_COUNT - 1, 3)
    joints = np.empty((T, JOINT_COUNT, 3))
    joints[:, 0] = root
    joints[:, 1:] = np.einsum("tab,tjb->tja", yaw_rot, rel) + root[:, None]
    return joints


def project_weak_perspective(joints3d: np.ndarray, scale: float,
                             translation) -> np.ndarray:
    """(..., 3) -> (..., 2) pixels: scale * (X, Y) + translation."""
    if scale <= 0:
        raise MlatError("weak-perspective scale must be positive")
    joints3d = np.asarray(joints3d, dtype=np.float64)
    return scale * joints3d[..., :2] + np.asarray(translation, dtype=np.float64)


# ---------------------------------------------------------------------------
# per-channel standardization (statistics computed from the synthetic corpus)


@dataclass
class ChannelStats:
    mean: np.ndarray   # (269,)
    std: np.ndarray    # (269,), floored away from zero

    @classmethod
    def from_corpus(cls, feature_seqs, std_floor: float = 1e-4) -> "ChannelStats":
        stacked = np.concatenate([np.asarray(f) for f in feature_seqs], axis=0)
        mean = stacked.mean(axis=0)
        std = np.maximum(stacked.std(axis=0), std_floor)
        return cls(mean=mean, std=std)

    def apply(self, feats: np.ndarray) -> np.ndarray:
        return (np.asarray(feats) - self.mean) / self.std

    def invert(self, feats: np.ndarray) -> np.ndarray:
        return np.asarray(feats) * self.std + self.mean


# ---------------------------------------------------------------------------
# file formats

M269_MAGIC = b"M269"
JNT3_MAGIC = b"JNT3"
FILE_VERSION = 1


def _save_frames(path, magic: bytes, frames: np.ndarray, width: int) -> None:
    arr = np.asarray(frames, dtype=np.float64).reshape(frames.shape[0], width)
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<II", FILE_VERSION, arr.shape[0]))
        f.write(arr.astype("<f8").tobytes(order="C"))


def _load_frames(path, magic: bytes, width: int) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != magic:
        raise MlatError(f"bad magic {blob[:4]!r} in {path}, expected {magic!r}")
    version, T = struct.unpack_from("<II", blob, 4)
    if version != FILE_VERSION:
        raise MlatError(f"unsupported file version {version} in {path}")
    data = np.frombuffer(blob, dtype="<f8", count=T * width, offset=12)
    return np.ascontiguousarray(data.reshape(T, width))


def save_m269(path, feats: np.ndarray) -> None:
    """Write a (T, 269) motion representation file."""
    if feats.ndim != 2 or feats.shape[1] != RAW_DIM:
        raise MlatError(f"expected (T, {RAW_DIM}) features, got {feats.shape}")
    _save_frames(path, M269_MAGIC, feats, RAW_DIM)


def load_m269(path) -> np.ndarray:
    return _load_frames(path, M269_MAGIC, RAW_DIM)


def save_jnt3(path, joints: np.ndarray) -> None:
    """Write a (T, 22, 3) joint sequence file."""
    if joints.ndim != 3 or joints.shape[1:] != (JOINT_COUNT, 3):
        raise MlatError(f"expected (T, {JOINT_COUNT}, 3) joints, got {joints.shape}")
    _save_frames(path, JNT3_MAGIC, joints.reshape(joints.shape[0], -1),
                 JOINT_COUNT * 3)


def load_jnt3(path) -> np.ndarray:
    flat = _load_frames(path, JNT3_MAGIC, JOINT_COUNT * 3)
    return flat.reshape(-1, JOINT_COUNT, 3)
