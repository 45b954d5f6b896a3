"""Skeleton model, 6D rotation algebra, forward kinematics, shape regression.

Rotations use the 6D representation: the first two columns of a rotation
matrix, column-major, i.e. ``r = (m00, m10, m20, m01, m11, m21)``. Decoding
runs Gram-Schmidt with first-column priority; near-parallel or near-zero
columns are rejected rather than perturbed.

All arrays are float64; every operation is a pure function.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateRotation,
    DegenerateShape,
    NotARotation,
    ParseError,
    TopologyMismatch,
    VersionMismatch,
)

SKELETON_FILE_VERSION = 1

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


@dataclass(frozen=True)
class Skeleton:
    """Joint tree with rest offsets in meters; joint 0 is the root."""

    joint_names: tuple[str, ...]
    parent_index: tuple[int, ...]
    rest_offsets: np.ndarray  # (J, 3)
    foot_joint_indices: tuple[int, ...]
    leg_upper_indices: tuple[int, ...]
    leg_lower_indices: tuple[int, ...]

    def __post_init__(self):
        j = len(self.joint_names)
        if len(self.parent_index) != j or self.rest_offsets.shape != (j, 3):
            raise ValueError("joint_names/parent_index/rest_offsets lengths disagree")
        if self.parent_index[0] != -1:
            raise ValueError("joint 0 must be the root (parent -1)")
        for i, p in enumerate(self.parent_index[1:], start=1):
            if not 0 <= p < i:
                raise ValueError(f"parent_index[{i}]={p} does not define a tree")
        if np.any(self.rest_offsets[0] != 0.0):
            raise ValueError("root rest offset must be (0,0,0)")
        children = set(self.parent_index[1:])
        for f in self.foot_joint_indices:
            if f in children:
                raise ValueError(f"foot joint {f} is not a leaf")
        if not self.leg_upper_indices or not self.leg_lower_indices:
            raise ValueError("leg segment lists must be non-empty")
        if set(self.leg_upper_indices) & set(self.leg_lower_indices):
            raise ValueError("upper/lower leg segments must be disjoint")
        self.rest_offsets.setflags(write=False)

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)


@dataclass(frozen=True)
class Pose:
    """Root position (meters, world) plus per-joint local 6D rotations."""

    root_position: np.ndarray  # (3,)
    joint_rotations: np.ndarray  # (J, 6)

    def __post_init__(self):
        if self.root_position.shape != (3,):
            raise ValueError("root_position must be a 3-vector")
        if self.joint_rotations.ndim != 2 or self.joint_rotations.shape[1] != 6:
            raise ValueError("joint_rotations must be (J, 6)")
        self.root_position.setflags(write=False)
        self.joint_rotations.setflags(write=False)


@dataclass(frozen=True)
class ShapeVector:
    """10-dimensional body shape coefficients (dimensionless)."""

    beta: np.ndarray  # (10,)

    def __post_init__(self):
        if self.beta.shape != (10,):
            raise ValueError("shape vector must have exactly 10 components")
        self.beta.setflags(write=False)

    @staticmethod
    def zeros() -> "ShapeVector":
        return ShapeVector(np.zeros(10))


def rot6d_decode(r: np.ndarray) -> np.ndarray:
    """Decode a 6D rotation into a 3x3 matrix via Gram-Schmidt.

    Raises DegenerateRotation when either column is near-zero (norm <= 1e-8)
    or the columns are near-parallel.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (6,):
        raise ValueError("rot6d must have 6 components")
    a, b = r[:3], r[3:]
    na = np.linalg.norm(a)
    if na <= 1e-8:
        raise DegenerateRotation("first column near zero")
    x = a / na
    y = b - np.dot(x, b) * x
    ny = np.linalg.norm(y)
    if np.linalg.norm(b) <= 1e-8 or ny <= 1e-8 * np.linalg.norm(b):
        raise DegenerateRotation("columns near-parallel or second column near zero")
    y = y / ny
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=1)


def rot6d_decode_many(r: np.ndarray) -> np.ndarray:
    """Vectorized decode of (..., 6) rotations to (..., 3, 3) matrices."""
    r = np.asarray(r, dtype=np.float64)
    a, b = r[..., :3], r[..., 3:]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    if np.any(na <= 1e-8) or np.any(nb <= 1e-8):
        raise DegenerateRotation("near-zero column in batch")
    x = a / na
    y = b - np.sum(x * b, axis=-1, keepdims=True) * x
    ny = np.linalg.norm(y, axis=-1, keepdims=True)
    if np.any(ny <= 1e-8 * nb):
        raise DegenerateRotation("near-parallel columns in batch")
    y = y / ny
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-1)


def rot6d_encode(m: np.ndarray) -> np.ndarray:
    """Encode a rotation matrix as its first two columns (column-major)."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError("expected a 3x3 matrix")
    if np.max(np.abs(m.T @ m - np.eye(3))) > 1e-6 or np.linalg.det(m) < 0:
        raise NotARotation("matrix is not orthonormal with det +1")
    return np.concatenate([m[:, 0], m[:, 1]])


def forward_kinematics(pose: Pose, skeleton: Skeleton) -> np.ndarray:
    """World-space joint positions (J, 3) for a pose on a skeleton."""
    return forward_kinematics_full(pose, skeleton)[0]


def forward_kinematics_full(pose: Pose, skeleton: Skeleton) -> tuple[np.ndarray, np.ndarray]:
    """World joint positions (J, 3) and world rotation matrices (J, 3, 3)."""
    j = skeleton.num_joints
    if pose.joint_rotations.shape[0] != j:
        raise ValueError("pose joint count does not match skeleton")
    local = rot6d_decode_many(pose.joint_rotations)
    pos = np.empty((j, 3))
    world = np.empty((j, 3, 3))
    pos[0] = pose.root_position
    world[0] = local[0]
    for i in range(1, j):
        p = skeleton.parent_index[i]
        world[i] = world[p] @ local[i]
        pos[i] = pos[p] + world[p] @ skeleton.rest_offsets[i]
    return pos, world


def skeleton_from_shape(
    beta: ShapeVector, template: Skeleton, blend_matrix: np.ndarray
) -> Skeleton:
    """Regress a skeleton from shape coefficients.

    rest_offsets(beta) = template.rest_offsets + reshape(blend_matrix @ beta);
    topology is unchanged. Linear in beta by construction.
    """
    j = template.num_joints
    blend_matrix = np.asarray(blend_matrix, dtype=np.float64)
    if blend_matrix.shape != (3 * j, 10):
        raise ValueError(f"blend matrix must be ({3 * j}, 10)")
    delta = (blend_matrix @ beta.beta).reshape(j, 3)
    offsets = template.rest_offsets + delta
    offsets[0] = 0.0  # root offset stays pinned
    lengths = np.linalg.norm(offsets[1:], axis=1)
    if np.any(lengths <= 1e-4):
        bad = int(np.argmin(lengths)) + 1
        raise DegenerateShape(
            f"bone to joint {template.joint_names[bad]} collapsed to {lengths.min():.2e} m"
        )
    return Skeleton(
        joint_names=template.joint_names,
        parent_index=template.parent_index,
        rest_offsets=offsets,
        foot_joint_indices=template.foot_joint_indices,
        leg_upper_indices=template.leg_upper_indices,
        leg_lower_indices=template.leg_lower_indices,
    )


def leg_length(skeleton: Skeleton) -> dict[str, float]:
    """Upper/lower leg lengths: sums of rest-offset norms over the segments."""
    up = sum(float(np.linalg.norm(skeleton.rest_offsets[i])) for i in skeleton.leg_upper_indices)
    lo = sum(float(np.linalg.norm(skeleton.rest_offsets[i])) for i in skeleton.leg_lower_indices)
    return {"upper": up, "lower": lo}


# ---------------------------------------------------------------------------
# Default template: 24 joints, SMPL body naming, y up, meters.

_JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
)

_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)

_OFFSETS = np.array([
    [0.00, 0.00, 0.00],    # pelvis
    [0.09, -0.08, 0.00],   # left_hip
    [-0.09, -0.08, 0.00],  # right_hip
    [0.00, 0.11, 0.00],    # spine1
    [0.00, -0.45, 0.00],   # left_knee (thigh)
    [0.00, -0.45, 0.00],   # right_knee
    [0.00, 0.13, 0.00],    # spine2
    [0.00, -0.42, 0.00],   # left_ankle (shin)
    [0.00, -0.42, 0.00],   # right_ankle
    [0.00, 0.06, 0.00],    # spine3
    [0.00, -0.07, 0.12],   # left_foot
    [0.00, -0.07, 0.12],   # right_foot
    [0.00, 0.22, 0.00],    # neck
    [0.07, 0.12, 0.00],    # left_collar
    [-0.07, 0.12, 0.00],   # right_collar
    [0.00, 0.09, 0.00],    # head
    [0.10, 0.02, 0.00],    # left_shoulder
    [-0.10, 0.02, 0.00],   # right_shoulder
    [0.26, 0.00, 0.00],    # left_elbow
    [-0.26, 0.00, 0.00],   # right_elbow
    [0.25, 0.00, 0.00],    # left_wrist
    [-0.25, 0.00, 0.00],   # right_wrist
    [0.08, 0.00, 0.00],    # left_hand
    [-0.08, 0.00, 0.00],   # right_hand
])

_LEG_JOINTS = (4, 5, 7, 8)
_ARM_JOINTS = (18, 19, 20, 21)
_SPINE_JOINTS = (3, 6, 9)


def _default_blend_matrix() -> np.ndarray:
    """Hand-designed (3J, 10) linear bone-offset regressor, full column rank.

    Columns: 0 overall size, 1 leg length, 2 arm length, 3 torso length,
    4 shoulder width, 5 hip width, 6 head/neck, 7 foot size,
    8 thigh-vs-shin trade, 9 forearm-vs-upper-arm trade.
    """
    j = len(_JOINT_NAMES)
    b = np.zeros((j, 3, 10))

    def add(col, joints, scale):
        for ji in joints:
            b[ji, :, col] += scale * _OFFSETS[ji]

    add(0, range(1, j), 0.05)
    add(1, _LEG_JOINTS, 0.08)
    add(2, _ARM_JOINTS, 0.08)
    add(3, _SPINE_JOINTS + (12,), 0.06)
    add(4, (13, 14, 16, 17), 0.05)
    add(5, (1, 2), 0.10)
    add(6, (12, 15), 0.08)
    add(7, (10, 11), 0.10)
    add(8, (4, 5), 0.06)
    add(8, (7, 8), -0.05)
    add(9, (18, 19), 0.05)
    add(9, (20, 21), -0.04)
    return b.reshape(3 * j, 10)


def default_skeleton() -> tuple[Skeleton, np.ndarray]:
    """The shipped 24-joint template skeleton and its blend matrix."""
    skel = Skeleton(
        joint_names=_JOINT_NAMES,
        parent_index=_PARENTS,
        rest_offsets=_OFFSETS.copy(),
        foot_joint_indices=(10, 11),
        leg_upper_indices=(4,),
        leg_lower_indices=(7,),
    )
    return skel, _default_blend_matrix()


def rest_pose(skeleton: Skeleton, root_position: np.ndarray | None = None) -> Pose:
    """All-identity-rotation pose, root at the given position (default standing height)."""
    if root_position is None:
        ll = leg_length(skeleton)
        hip_drop = abs(float(skeleton.rest_offsets[1][1]))
        root_position = np.array([0.0, hip_drop + ll["upper"] + ll["lower"] + 0.07, 0.0])
    rots = np.tile(IDENTITY_6D, (skeleton.num_joints, 1))
    return Pose(root_position=np.asarray(root_position, dtype=np.float64), joint_rotations=rots)


# ---------------------------------------------------------------------------
# Versioned skeleton.json I/O

def save_skeleton(path: str | Path, skeleton: Skeleton, blend_matrix: np.ndarray) -> None:
    doc = {
        "version": SKELETON_FILE_VERSION,
        "joint_names": list(skeleton.joint_names),
        "parents": list(skeleton.parent_index),
        "offsets": skeleton.rest_offsets.tolist(),
        "foot_indices": list(skeleton.foot_joint_indices),
        "leg_segments": {
            "upper": list(skeleton.leg_upper_indices),
            "lower": list(skeleton.leg_lower_indices),
        },
        "blend_matrix": np.asarray(blend_matrix).reshape(-1).tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_skeleton(path: str | Path) -> tuple[Skeleton, np.ndarray]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e}") from e
    if doc.get("version") != SKELETON_FILE_VERSION:
        raise VersionMismatch(f"skeleton file version {doc.get('version')!r}")
    try:
        skel = Skeleton(
            joint_names=tuple(doc["joint_names"]),
            parent_index=tuple(doc["parents"]),
            rest_offsets=np.asarray(doc["offsets"], dtype=np.float64),
            foot_joint_indices=tuple(doc["foot_indices"]),
            leg_upper_indices=tuple(doc["leg_segments"]["upper"]),
            leg_lower_indices=tuple(doc["leg_segments"]["lower"]),
        )
        j = skel.num_joints
        blend = np.asarray(doc["blend_matrix"], dtype=np.float64).reshape(3 * j, 10)
    except (KeyError, ValueError) as e:
        raise ParseError(f"{path}: {e}") from e
    return skel, blend


def check_same_topology(a: Skeleton, b: Skeleton) -> None:
    if a.parent_index != b.parent_index or len(a.joint_names) != len(b.joint_names):
        raise TopologyMismatch("skeleton topology differs from template")
