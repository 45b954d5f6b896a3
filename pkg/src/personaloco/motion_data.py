"""Motion clips, frame features, windows, contacts, file I/O, synthetic gait.

Feature layout per frame (dimension 6 + 12J): root position o (3), root
displacement dO (3, meters/frame), local 6D rotations r (J*6), rotation
velocities dR (J*6, per frame). Velocities are componentwise finite
differences on the 6D coordinates; frame 1 copies frame 2's velocity so the
first frame carries no zero spike. Geodesic rotational velocity would be an
alternative reading; componentwise differences are what we normalize, learn
and invert here.

Window convention: PAST_LEN past frames + FUTURE_LEN future frames, all
expressed in the ground-plane frame of the last past frame (the pivot):
pivot root above the origin, pivot facing +z, y up.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    ClipTooShort,
    DegenerateFacing,
    InvalidGaitSpec,
    ParseError,
    VersionMismatch,
)
from .kinematics import (
    IDENTITY_6D,
    Pose,
    ShapeVector,
    Skeleton,
    default_skeleton,
    forward_kinematics,
    leg_length,
    rot6d_decode,
    rot6d_decode_many,
    rot6d_encode,
)

PAST_LEN = 10
FUTURE_LEN = 45
WINDOW_LEN = PAST_LEN + FUTURE_LEN

MCLIP_MAGIC = b"MCLP"
MCLIP_VERSION = 1

DEFAULT_CONTACT_HEIGHT_M = 0.05
DEFAULT_CONTACT_SPEED_MS = 0.1


def feature_dim(num_joints: int) -> int:
    return 6 + 12 * num_joints


@dataclass(frozen=True)
class FrameFeature:
    """One frame's feature vector split into its named parts."""

    o: np.ndarray   # (3,)
    dO: np.ndarray  # (3,)
    r: np.ndarray   # (J, 6)
    dR: np.ndarray  # (J, 6)

    def flatten(self) -> np.ndarray:
        vec = np.concatenate([self.o, self.dO, self.r.reshape(-1), self.dR.reshape(-1)])
        if not np.all(np.isfinite(vec)):
            raise ValueError("frame feature contains non-finite values")
        return vec

    @staticmethod
    def unflatten(vec: np.ndarray, num_joints: int) -> "FrameFeature":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (feature_dim(num_joints),):
            raise ValueError(f"feature vector must have {feature_dim(num_joints)} entries")
        j6 = num_joints * 6
        return FrameFeature(
            o=vec[0:3].copy(),
            dO=vec[3:6].copy(),
            r=vec[6 : 6 + j6].reshape(num_joints, 6).copy(),
            dR=vec[6 + j6 :].reshape(num_joints, 6).copy(),
        )


@dataclass
class MotionClip:
    """Timed pose sequence on a named skeleton. Immutable after construction."""

    skeleton_id: str
    fps: float
    root_positions: np.ndarray  # (N, 3) float64
    rotations: np.ndarray       # (N, J, 6) float64
    contacts: np.ndarray | None = None  # (N, n_feet) bool
    persona_id: str | None = None

    def __post_init__(self):
        n = self.root_positions.shape[0]
        if n < 2:
            raise ClipTooShort("clip must have at least 2 frames")
        if self.rotations.shape[0] != n or self.root_positions.shape[1] != 3:
            raise ValueError("root_positions/rotations frame counts disagree")
        if self.contacts is not None and self.contacts.shape[0] != n:
            raise ValueError("contacts must match frame count")
        for a in (self.root_positions, self.rotations, self.contacts):
            if a is not None:
                a.setflags(write=False)

    @property
    def num_frames(self) -> int:
        return self.root_positions.shape[0]

    @property
    def num_joints(self) -> int:
        return self.rotations.shape[1]

    def pose(self, i: int) -> Pose:
        return Pose(self.root_positions[i].copy(), self.rotations[i].copy())


@dataclass(frozen=True)
class GroundFrame:
    """Rigid ground-plane transform: p' = yaw @ (p - origin); origin.y = 0."""

    yaw: np.ndarray     # (3, 3) rotation about the vertical axis
    origin: np.ndarray  # (3,), origin[1] == 0

    def apply_points(self, p: np.ndarray) -> np.ndarray:
        return (p - self.origin) @ self.yaw.T

    def apply_rotations(self, r6: np.ndarray) -> np.ndarray:
        m = rot6d_decode_many(r6)
        m = self.yaw @ m
        return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)

    def inverse(self) -> "GroundFrame":
        return GroundFrame(yaw=self.yaw.T.copy(), origin=-(self.yaw @ self.origin))

    def compose(self, inner: "GroundFrame") -> "GroundFrame":
        """Transform equal to applying `inner` first, then self."""
        return GroundFrame(
            yaw=self.yaw @ inner.yaw,
            origin=inner.origin + inner.yaw.T @ self.origin,
        )

    @staticmethod
    def identity() -> "GroundFrame":
        return GroundFrame(yaw=np.eye(3), origin=np.zeros(3))


def yaw_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def ground_facing(root_rot6d: np.ndarray) -> np.ndarray:
    """Unit ground-plane facing (x, z) of a root rotation: its +z axis projected down."""
    m = rot6d_decode(root_rot6d)
    f = np.array([m[0, 2], m[2, 2]])
    n = np.linalg.norm(f)
    if n <= 1e-6:
        raise DegenerateFacing("root +z axis is vertical; ground facing undefined")
    return f / n


def canonical_frame(root_position: np.ndarray, root_rot6d: np.ndarray) -> GroundFrame:
    """GroundFrame that moves this root over the origin, facing +z."""
    f = ground_facing(root_rot6d)
    theta = math.atan2(f[0], f[1])
    origin = np.array([root_position[0], 0.0, root_position[2]])
    return GroundFrame(yaw=yaw_matrix(-theta), origin=origin)


def canonicalize_window(
    root_positions: np.ndarray, rotations: np.ndarray, pivot_frame: int
) -> tuple[np.ndarray, np.ndarray, GroundFrame]:
    """Re-express frames in the pivot frame's canonical ground frame.

    Returns transformed (positions, rotations) plus the applied transform.
    Only the root is touched; non-root local rotations are parent-relative
    and unchanged by a rigid world transform.
    """
    gf = canonical_frame(root_positions[pivot_frame], rotations[pivot_frame, 0])
    pos = gf.apply_points(root_positions)
    rot = rotations.copy()
    rot[:, 0, :] = gf.apply_rotations(rotations[:, 0, :])
    return pos, rot, gf


def encode_features(clip: MotionClip) -> np.ndarray:
    """Per-frame feature matrix (N, 6+12J) with finite-difference velocities."""
    return encode_feature_frames(clip.root_positions, clip.rotations)


def encode_feature_frames(root_positions: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    n, j = rotations.shape[0], rotations.shape[1]
    if n < 2:
        raise ClipTooShort("need at least 2 frames to form velocities")
    o = np.asarray(root_positions, dtype=np.float64)
    r = np.asarray(rotations, dtype=np.float64).reshape(n, j * 6)
    do = np.empty_like(o)
    dr = np.empty_like(r)
    do[1:] = o[1:] - o[:-1]
    dr[1:] = r[1:] - r[:-1]
    do[0] = do[1]
    dr[0] = dr[1]
    feats = np.concatenate([o, do, r, dr], axis=1)
    if not np.all(np.isfinite(feats)):
        raise ValueError("non-finite values in encoded features")
    return feats


def decode_features(features: np.ndarray, num_joints: int) -> tuple[np.ndarray, np.ndarray]:
    """Recover (root_positions, rotations) from feature rows.

    Ground-plane root positions integrate the displacement channels from the
    first frame's absolutes (the path is cumulative by nature); root height
    reads the absolute channel per frame (height above the ground plane is
    not, and integrating it would drift across blocks). Both invert
    encode_features exactly on consistent features; on generated features
    the displacement channels carry the trained path signal. Rotations are
    read back directly.
    """
    features = np.asarray(features, dtype=np.float64)
    f = feature_dim(num_joints)
    if features.ndim != 2 or features.shape[1] != f:
        raise ValueError(f"expected (N, {f}) features")
    n = features.shape[0]
    o = np.empty((n, 3))
    o[0] = features[0, 0:3]
    if n > 1:
        o[1:, [0, 2]] = o[0, [0, 2]] + np.cumsum(features[1:, [3, 5]], axis=0)
    o[:, 1] = features[:, 1]
    r = features[:, 6 : 6 + num_joints * 6].reshape(n, num_joints, 6).copy()
    return o, r


@dataclass(frozen=True)
class NormStats:
    """Per-dimension feature mean/std; std floored (>= 1e-6 invariant).

    The floor is 1e-3: channels that are constant in the corpus (leaf-joint
    rotation components etc.) otherwise amplify the ~1e-3 re-orthogonalization
    residue of generated rotations a thousandfold, which blows up the
    autoregressive condition tokens.
    """

    mean: np.ndarray
    std: np.ndarray

    @staticmethod
    def from_features(features: np.ndarray) -> "NormStats":
        mean = features.mean(axis=0)
        std = np.maximum(features.std(axis=0), 1e-3)
        return NormStats(mean=mean, std=std)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "NormStats":
        return NormStats(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
        )


@dataclass
class TrainingWindow:
    """One canonicalized training sample: 10 past + 45 future frames.

    `contacts` carries the future frames' ground-truth foot contacts for the
    contact loss; `clip_id`/`start` give a deterministic ordering key.
    """

    past: np.ndarray         # (PAST_LEN, F)
    future: np.ndarray       # (FUTURE_LEN, F)
    traj_pos: np.ndarray     # (FUTURE_LEN, 2) ground-plane root positions
    traj_facing: np.ndarray  # (FUTURE_LEN, 2) unit facing vectors
    beta: ShapeVector
    text_key: str
    contacts: np.ndarray | None = None  # (FUTURE_LEN, n_feet) bool
    clip_id: str = ""
    start: int = 0


def extract_windows(
    clip: MotionClip,
    stride: int,
    beta: ShapeVector | None = None,
    text_key: str | None = None,
    clip_id: str = "",
) -> list[TrainingWindow]:
    """Sliding windows, each canonicalized at its 10th (last past) frame."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = clip.num_frames
    if n < WINDOW_LEN:
        raise ClipTooShort(f"need >= {WINDOW_LEN} frames, got {n}")
    beta = beta if beta is not None else ShapeVector.zeros()
    text_key = text_key if text_key is not None else (clip.persona_id or "")
    windows = []
    for start in range(0, n - WINDOW_LEN + 1, stride):
        pos = clip.root_positions[start : start + WINDOW_LEN]
        rot = clip.rotations[start : start + WINDOW_LEN]
        cpos, crot, _ = canonicalize_window(pos, rot, PAST_LEN - 1)
        feats = encode_feature_frames(cpos, crot)
        traj_pos = cpos[PAST_LEN:, [0, 2]].copy()
        traj_facing = np.stack(
            [ground_facing(crot[i, 0]) for i in range(PAST_LEN, WINDOW_LEN)]
        )
        contacts = None
        if clip.contacts is not None:
            contacts = clip.contacts[start + PAST_LEN : start + WINDOW_LEN].copy()
        windows.append(
            TrainingWindow(
                past=feats[:PAST_LEN],
                future=feats[PAST_LEN:],
                traj_pos=traj_pos,
                traj_facing=traj_facing,
                beta=beta,
                text_key=text_key,
                contacts=contacts,
                clip_id=clip_id,
                start=start,
            )
        )
    return windows


def detect_contacts(
    clip: MotionClip,
    skeleton: Skeleton,
    height_thresh: float = DEFAULT_CONTACT_HEIGHT_M,
    speed_thresh: float = DEFAULT_CONTACT_SPEED_MS,
) -> np.ndarray:
    """Per-frame per-foot contact: FK height AND horizontal speed both low."""
    n = clip.num_frames
    feet = skeleton.foot_joint_indices
    foot_pos = np.empty((n, len(feet), 3))
    for i in range(n):
        p = forward_kinematics(clip.pose(i), skeleton)
        foot_pos[i] = p[list(feet)]
    speed = np.empty((n, len(feet)))
    horiz = foot_pos[:, :, [0, 2]]
    speed[1:] = np.linalg.norm(horiz[1:] - horiz[:-1], axis=2) * clip.fps
    speed[0] = speed[1]
    return (foot_pos[:, :, 1] < height_thresh) & (speed < speed_thresh)


# ---------------------------------------------------------------------------
# Procedural gait generator

@dataclass
class GaitSpec:
    """Parameters of the synthetic gait oracle.

    speed multiplies stride_m (advance per period = stride_m * speed);
    speed == 0 selects a stationary idle bob with permanent foot contact.
    speed_end, when set, ramps the speed multiplier linearly over the clip
    (the stance/plant machinery follows any monotone path distance).
    style_offsets maps upper-body joint names to constant (rx, ry, rz)
    rotation offsets in radians; leg-chain joints are IK-driven and rejected.
    """

    leg_scale: float = 1.0
    stride_m: float = 0.6
    period_frames: int = 30
    style_offsets: dict = field(default_factory=dict)
    path: str = "line"  # line | arc
    speed: float = 1.0
    speed_end: float | None = None
    arc_radius_m: float = 3.0
    stance_fraction_left: float = 0.6
    stance_fraction_right: float = 0.6
    phase_right: float = 0.5
    step_height_m: float = 0.08
    bob_amp_m: float = 0.015
    arm_swing_rad: float = 0.45
    torso_sway_rad: float = 0.05


_LEG_CHAIN_NAMES = {
    "left_hip", "right_hip", "left_knee", "right_knee",
    "left_ankle", "right_ankle", "left_foot", "right_foot",
}


def _smoothstep(u: np.ndarray | float):
    return 3.0 * u**2 - 2.0 * u**3


def _axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    t = 1.0 - c
    return np.array([
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ])


def _euler_xyz(rx: float, ry: float, rz: float) -> np.ndarray:
    return (
        _axis_angle(np.array([0.0, 0.0, 1.0]), rz)
        @ _axis_angle(np.array([0.0, 1.0, 0.0]), ry)
        @ _axis_angle(np.array([1.0, 0.0, 0.0]), rx)
    )


def _frame_from_bone(direction: np.ndarray, pole: np.ndarray) -> np.ndarray:
    """World rotation whose -y axis follows `direction`, +z leaning to `pole`."""
    y = -direction / np.linalg.norm(direction)
    z = pole - np.dot(pole, y) * y
    nz = np.linalg.norm(z)
    if nz < 1e-9:
        # pole parallel to the bone; fall back to world z
        z = np.array([0.0, 0.0, 1.0]) - y[2] * y
        nz = np.linalg.norm(z)
    z = z / nz
    x = np.cross(y, z)
    return np.stack([x, y, z], axis=1)


def _two_bone_ik(hip: np.ndarray, target: np.ndarray, l1: float, l2: float,
                 pole: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """World rotations (hip, knee) placing the ankle exactly at target."""
    d = target - hip
    dn = np.linalg.norm(d)
    if not (abs(l1 - l2) + 1e-9 < dn < l1 + l2 - 1e-9):
        raise InvalidGaitSpec(
            f"IK target at {dn:.3f} m outside reach ({abs(l1 - l2):.3f}, {l1 + l2:.3f})"
        )
    u = d / dn
    cos_a = (l1 * l1 + dn * dn - l2 * l2) / (2.0 * l1 * dn)
    cos_a = min(1.0, max(-1.0, cos_a))
    sin_a = math.sqrt(max(0.0, 1.0 - cos_a * cos_a))
    w = pole - np.dot(pole, u) * u
    nw = np.linalg.norm(w)
    if nw < 1e-9:
        w = np.array([0.0, 0.0, 1.0]) - u[2] * u
        nw = np.linalg.norm(w)
    w = w / nw
    knee = hip + l1 * (cos_a * u + sin_a * w)
    r_hip = _frame_from_bone(knee - hip, pole)
    r_knee = _frame_from_bone(target - knee, pole)
    return r_hip, r_knee


def _path_state(spec: GaitSpec, dist: float) -> tuple[np.ndarray, float]:
    """Ground position (x, z) and facing angle (from +z) after arc length dist."""
    if spec.path == "line":
        return np.array([0.0, dist]), 0.0
    if spec.path == "arc":
        r = spec.arc_radius_m
        th = dist / r
        return np.array([r * (1.0 - math.cos(th)), r * math.sin(th)]), th
    raise InvalidGaitSpec(f"unknown path {spec.path!r}")


def synth_gait(
    spec: GaitSpec,
    n_frames: int = 240,
    skeleton: Skeleton | None = None,
    fps: float = 30.0,
    skeleton_id: str = "default",
    persona_id: str | None = None,
) -> tuple[MotionClip, Skeleton]:
    """Kinematically exact synthetic walk with analytically known contacts.

    Stance feet are planted by IK, so foot skate is zero by construction.
    Returns the clip and the (possibly leg-scaled) skeleton it lives on.
    """
    if spec.period_frames < 10:
        raise InvalidGaitSpec("period must be >= 10 frames")
    if spec.stride_m <= 0:
        raise InvalidGaitSpec("stride must be > 0")
    if spec.speed < 0:
        raise InvalidGaitSpec("speed must be >= 0")
    for fr in (spec.stance_fraction_left, spec.stance_fraction_right):
        if not 0.2 <= fr <= 0.9:
            raise InvalidGaitSpec("stance fractions must lie in [0.2, 0.9]")
    bad = set(spec.style_offsets) & _LEG_CHAIN_NAMES
    if bad:
        raise InvalidGaitSpec(f"style offsets target IK-driven joints: {sorted(bad)}")

    if skeleton is None:
        skeleton, _ = default_skeleton()
        if spec.leg_scale != 1.0:
            off = skeleton.rest_offsets.copy()
            for ji in (4, 5, 7, 8):
                off[ji] *= spec.leg_scale
            skeleton = replace(skeleton, rest_offsets=off)

    name_to_idx = {n: i for i, n in enumerate(skeleton.joint_names)}
    j = skeleton.num_joints
    off = skeleton.rest_offsets
    l1 = float(np.linalg.norm(off[4]))
    l2 = float(np.linalg.norm(off[7]))
    leg_len = l1 + l2
    root_h = 0.88 * leg_len - off[1][1] - off[10][1]
    speed_end = spec.speed if spec.speed_end is None else spec.speed_end
    top_speed = max(spec.speed, speed_end)
    adv = spec.stride_m * top_speed  # advance per period at the fastest point
    p = spec.period_frames

    # reachability check at worst-case hip-to-ankle extension
    worst_horiz = 0.5 * max(spec.stance_fraction_left, spec.stance_fraction_right) * adv + 0.05
    worst = math.hypot(0.88 * leg_len + spec.bob_amp_m, worst_horiz)
    if worst >= 0.985 * leg_len:
        raise InvalidGaitSpec(
            f"stride {spec.stride_m} too long for leg length {leg_len:.3f}"
        )

    feet = [
        # (hip, knee, ankle, foot joints, phase, stance fraction, lateral sign)
        (1, 4, 7, 10, 0.0, spec.stance_fraction_left, +1.0),
        (2, 5, 8, 11, spec.phase_right, spec.stance_fraction_right, -1.0),
    ]
    idle = top_speed == 0.0

    def path_at(frame_f: float) -> tuple[np.ndarray, float]:
        # integrated advance: linear speed ramp from spec.speed to speed_end
        u = frame_f if n_frames <= 1 else frame_f / n_frames
        v_int = spec.speed * frame_f + (speed_end - spec.speed) * frame_f * u / 2.0
        dist = spec.stride_m * v_int / p
        return _path_state(spec, dist)

    def plant_point(foot_idx: int, phase0: float, s_frac: float, lat: float, k: int) -> np.ndarray:
        mid = (k + phase0 + s_frac / 2.0) * p
        pos2, ang = path_at(mid)
        perp = np.array([math.cos(ang), -math.sin(ang)])
        xz = pos2 + perp * lat
        return np.array([xz[0], 0.0, xz[1]])

    root_positions = np.empty((n_frames, 3))
    rotations = np.tile(IDENTITY_6D, (n_frames, j, 1))
    contacts = np.zeros((n_frames, len(skeleton.foot_joint_indices)), dtype=bool)

    style = {name_to_idx[k]: _euler_xyz(*v) for k, v in spec.style_offsets.items()}

    for i in range(n_frames):
        pos2, ang = path_at(float(i))
        bob = spec.bob_amp_m * math.sin(4.0 * math.pi * i / p)
        root = np.array([pos2[0], root_h + bob, pos2[1]])
        r_root = yaw_matrix(ang)
        root_positions[i] = root
        rotations[i, 0] = rot6d_encode(r_root)
        forward = np.array([math.sin(ang), 0.0, math.cos(ang)])

        for fi, (hip_j, knee_j, ankle_j, foot_j, ph, s_frac, side) in enumerate(feet):
            lat = side * abs(off[hip_j][0])
            if idle:
                target = plant_point(fi, ph, s_frac, lat, 0)
                in_stance = True
            else:
                cyc = i / p - ph
                k = math.floor(cyc)
                stance_end = math.floor((k + ph) * p + s_frac * p)
                next_start = math.ceil((k + 1 + ph) * p)
                if stance_end < i < next_start:
                    in_stance = False
                    u = (i - stance_end) / (next_start - stance_end)
                    p0 = plant_point(fi, ph, s_frac, lat, k)
                    p1 = plant_point(fi, ph, s_frac, lat, k + 1)
                    target = p0 + (p1 - p0) * _smoothstep(u)
                    target[1] = spec.step_height_m * math.sin(math.pi * u)
                else:
                    in_stance = True
                    target = plant_point(fi, ph, s_frac, lat, k)
            contacts[i, fi] = in_stance

            hip_world = root + r_root @ off[hip_j]
            r_ankle_world = yaw_matrix(ang)
            ankle_target = target - r_ankle_world @ off[foot_j]
            r_hip_w, r_knee_w = _two_bone_ik(hip_world, ankle_target, l1, l2, forward)
            rotations[i, hip_j] = rot6d_encode(r_root.T @ r_hip_w)
            rotations[i, knee_j] = rot6d_encode(r_hip_w.T @ r_knee_w)
            rotations[i, ankle_j] = rot6d_encode(r_knee_w.T @ r_ankle_world)

        # upper body: phase-locked swings plus per-persona style offsets
        cyc_t = 2.0 * math.pi * i / p
        swing = 0.0 if idle else spec.arm_swing_rad
        sway = 0.0 if idle else spec.torso_sway_rad
        upper = {
            "left_shoulder": _euler_xyz(swing * math.sin(cyc_t), 0.0, 0.0),
            "right_shoulder": _euler_xyz(swing * math.sin(cyc_t + math.pi), 0.0, 0.0),
            "left_elbow": _euler_xyz(0.3 * swing * math.sin(cyc_t) - 0.1, 0.0, 0.0),
            "right_elbow": _euler_xyz(0.3 * swing * math.sin(cyc_t + math.pi) - 0.1, 0.0, 0.0),
            "spine1": _euler_xyz(0.0, 0.0, sway * math.sin(cyc_t * 2.0)),
            "spine2": _euler_xyz(0.0, 0.0, -0.5 * sway * math.sin(cyc_t * 2.0)),
        }
        for name, m in upper.items():
            ji = name_to_idx[name]
            base = style.get(ji, np.eye(3))
            rotations[i, ji] = rot6d_encode(base @ m)
        for ji, m in style.items():
            if skeleton.joint_names[ji] not in upper:
                rotations[i, ji] = rot6d_encode(m)

    clip = MotionClip(
        skeleton_id=skeleton_id,
        fps=fps,
        root_positions=root_positions,
        rotations=rotations,
        contacts=contacts,
        persona_id=persona_id,
    )
    return clip, skeleton


# ---------------------------------------------------------------------------
# .mclip file format: magic, version u32, header-length u32, JSON header,
# float32 LE payload (frame-major: root xyz then J*6 rotations), optional
# packed contact bits. Payload is float32; synthesized float64 data quantizes
# on first save and round-trips bitwise afterwards.

def save_clip(path: str | Path, clip: MotionClip) -> None:
    header = {
        "skeleton_id": clip.skeleton_id,
        "fps": clip.fps,
        "frame_count": clip.num_frames,
        "num_joints": clip.num_joints,
        "persona_id": clip.persona_id,
        "has_contacts": clip.contacts is not None,
        "num_feet": 0 if clip.contacts is None else int(clip.contacts.shape[1]),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    n, j = clip.num_frames, clip.num_joints
    payload = np.empty((n, 3 + j * 6), dtype="<f4")
    payload[:, :3] = clip.root_positions
    payload[:, 3:] = clip.rotations.reshape(n, j * 6)
    with open(path, "wb") as f:
        f.write(MCLIP_MAGIC)
        f.write(struct.pack("<II", MCLIP_VERSION, len(hbytes)))
        f.write(hbytes)
        f.write(payload.tobytes())
        if clip.contacts is not None:
            f.write(np.packbits(clip.contacts.reshape(-1).astype(np.uint8)).tobytes())


def load_clip(path: str | Path) -> MotionClip:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MCLIP_MAGIC:
        raise ParseError(f"{path}: not an mclip file (bad magic)")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != MCLIP_VERSION:
        raise VersionMismatch(f"{path}: mclip version {version}")
    if len(raw) < 12 + hlen:
        raise ParseError(f"{path}: truncated header at byte {len(raw)}")
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
        n = int(header["frame_count"])
        j = int(header["num_joints"])
    except (json.JSONDecodeError, KeyError, ValueError) as e:
        raise ParseError(f"{path}: bad header: {e}") from e
    row = 3 + j * 6
    body_start = 12 + hlen
    body_len = n * row * 4
    if len(raw) < body_start + body_len:
        raise ParseError(f"{path}: truncated payload at byte {len(raw)}")
    payload = np.frombuffer(raw[body_start : body_start + body_len], dtype="<f4")
    payload = payload.reshape(n, row).astype(np.float64)
    contacts = None
    if header.get("has_contacts"):
        nf = int(header.get("num_feet", 0))
        nbits = n * nf
        nbytes = (nbits + 7) // 8
        cstart = body_start + body_len
        if len(raw) < cstart + nbytes:
            raise ParseError(f"{path}: truncated contact block at byte {len(raw)}")
        bits = np.unpackbits(np.frombuffer(raw[cstart : cstart + nbytes], dtype=np.uint8))
        contacts = bits[:nbits].reshape(n, nf).astype(bool)
    return MotionClip(
        skeleton_id=header["skeleton_id"],
        fps=float(header["fps"]),
        root_positions=payload[:, :3].copy(),
        rotations=payload[:, 3:].reshape(n, j, 6).copy(),
        contacts=contacts,
        persona_id=header.get("persona_id"),
    )


def save_manifest(path: str | Path, entries: list[dict]) -> None:
    Path(path).write_text(json.dumps(entries, indent=1, sort_keys=True))


def load_manifest(path: str | Path) -> list[dict]:
    p = Path(path)
    try:
        entries = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e}") from e
    if not isinstance(entries, list):
        raise ParseError(f"{path}: manifest must be a JSON list")
    for e in entries:
        e["clip_path"] = str((p.parent / e["clip_path"]).resolve())
    return entries
