"""Encoder-only conditional denoiser, its loss suite, checkpoint format.

Token sequence: [timestep, shape, text, 45 trajectory, 10 past (or a learned
null token when past is dropped), 45 noised future] with sinusoidal
positional encoding over disjoint index ranges per token group. The 45
future-position outputs pass through a 3-layer MLP head to predict the clean
block.

Losses: feature MSE in the normalized diffusion space, plus FK joint
position / velocity MSE and the foot contact penalty (height^2 + |central
difference velocity|^2 over contact frames), in meters. Total weights are
(1, 0.2, 2, 0.1).
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .conditioning import EMBED_DIM, ConditionBundle
from .diffusion import DiffusionSchedule
from .errors import (
    ConfigMismatch,
    NonFiniteActivation,
    ParseError,
    ShapeMismatch,
    VersionMismatch,
)
from .kinematics import Skeleton
from .motion_data import FUTURE_LEN, PAST_LEN, NormStats, feature_dim

CKPT_MAGIC = b"PLCK"
CKPT_VERSION = 1

LAMBDA_POS = 0.2
LAMBDA_VEL = 2.0
LAMBDA_FOOT = 0.1


@dataclass
class DenoiserConfig:
    token_dim: int = 256
    ff_dim: int = 1024
    layers: int = 4
    heads: int = 4
    dropout: float = 0.2
    out_mlp_hidden: int = 512
    num_joints: int = 24

    def __post_init__(self):
        if self.token_dim % self.heads != 0:
            raise ValueError("token_dim must be divisible by heads")

    @property
    def feature_dim(self) -> int:
        return feature_dim(self.num_joints)

    @staticmethod
    def desk_scale(num_joints: int = 24) -> "DenoiserConfig":
        # dropout 0.2 regularizes the full corpus; the desk preset overfits
        # a handful of clips on purpose, so it runs lighter
        return DenoiserConfig(
            token_dim=64, ff_dim=128, layers=2, dropout=0.1, num_joints=num_joints
        )


# token group index ranges within the positional-encoding table
_PE_GROUPS = {
    "time": (0, 1),
    "shape": (4, 5),
    "text": (8, 9),
    "traj": (16, 16 + FUTURE_LEN),
    "past": (16 + FUTURE_LEN + 4, 16 + FUTURE_LEN + 4 + PAST_LEN),
    "future": (16 + FUTURE_LEN + 4 + PAST_LEN + 4, 16 + FUTURE_LEN + 4 + PAST_LEN + 4 + FUTURE_LEN),
}
_PE_TABLE_LEN = _PE_GROUPS["future"][1]

# slices of the concatenated token sequence, for tests poking at internals
TOKEN_SLICES = {
    "time": slice(0, 1),
    "shape": slice(1, 2),
    "text": slice(2, 3),
    "traj": slice(3, 3 + FUTURE_LEN),
    "past": slice(3 + FUTURE_LEN, 3 + FUTURE_LEN + PAST_LEN),
    "future": slice(3 + FUTURE_LEN + PAST_LEN, 3 + FUTURE_LEN + PAST_LEN + FUTURE_LEN),
}
NUM_TOKENS = 3 + FUTURE_LEN + PAST_LEN + FUTURE_LEN


def _sinusoid_table(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float32).unsqueeze(1)
    i = torch.arange(0, dim, 2, dtype=torch.float32)
    div = torch.exp(-math.log(10000.0) * i / dim)
    table = torch.zeros(length, dim)
    table[:, 0::2] = torch.sin(pos * div)
    table[:, 1::2] = torch.cos(pos * div[: table[:, 1::2].shape[1]])
    return table


class MotionDenoiser(nn.Module):
    """G(x_t, t; past, traj, shape, text) -> x0_hat."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        d, f = config.token_dim, config.feature_dim
        self.proj_past = nn.Linear(f, d)
        self.proj_future = nn.Linear(f, d)
        self.proj_traj_pos = nn.Linear(2, d)
        self.proj_traj_face = nn.Linear(2, d)
        self.proj_shape = nn.Linear(10, d)
        self.proj_text = nn.Linear(EMBED_DIM, d)
        self.time_embed = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.null_past = nn.Parameter(torch.zeros(d))
        self.null_text = nn.Parameter(torch.zeros(d))
        layer = nn.TransformerEncoderLayer(
            d_model=d,
            nhead=config.heads,
            dim_feedforward=config.ff_dim,
            dropout=config.dropout,
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=config.layers)
        h = config.out_mlp_hidden
        self.out_mlp = nn.Sequential(
            nn.Linear(d, h), nn.SiLU(), nn.Linear(h, d), nn.SiLU(), nn.Linear(d, f)
        )
        # zero-init the head's last layer: the untrained model predicts the
        # data mean, which stabilizes the first diffusion training steps
        nn.init.zeros_(self.out_mlp[-1].weight)
        nn.init.zeros_(self.out_mlp[-1].bias)
        self.pe_dropout = nn.Dropout(config.dropout)
        self.register_buffer("pe", _sinusoid_table(_PE_TABLE_LEN, d), persistent=False)

    def _group_pe(self, name: str) -> torch.Tensor:
        lo, hi = _PE_GROUPS[name]
        return self.pe[lo:hi]

    def build_tokens(
        self,
        x_t: torch.Tensor,
        t: torch.Tensor,
        past: torch.Tensor,
        traj_pos: torch.Tensor,
        traj_face: torch.Tensor,
        beta: torch.Tensor,
        text: torch.Tensor,
        drop_past: torch.Tensor,
        drop_text: torch.Tensor,
    ) -> torch.Tensor:
        """Projected token sequence with positional encodings added."""
        b = x_t.shape[0]
        d = self.config.token_dim
        t_sin = self.pe[t.long()]  # (B, d) sinusoidal timestep code
        tok_time = self.time_embed(t_sin).unsqueeze(1)
        tok_shape = self.proj_shape(beta).unsqueeze(1)
        tok_text = self.proj_text(text)
        tok_text = torch.where(drop_text.view(b, 1), self.null_text.expand(b, d), tok_text)
        tok_text = tok_text.unsqueeze(1)
        tok_traj = self.proj_traj_pos(traj_pos) + self.proj_traj_face(traj_face)
        tok_past = self.proj_past(past)
        tok_past = torch.where(
            drop_past.view(b, 1, 1), self.null_past.expand(b, PAST_LEN, d), tok_past
        )
        tok_future = self.proj_future(x_t)

        tok_time = tok_time + self._group_pe("time")
        tok_shape = tok_shape + self._group_pe("shape")
        tok_text = tok_text + self._group_pe("text")
        tok_traj = tok_traj + self._group_pe("traj")
        tok_past = tok_past + self._group_pe("past")
        tok_future = tok_future + self._group_pe("future")
        return torch.cat([tok_time, tok_shape, tok_text, tok_traj, tok_past, tok_future], dim=1)

    def encode_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        """Dropout + encoder stack + output head over the future positions."""
        h = self.encoder(self.pe_dropout(tokens))
        return self.out_mlp(h[:, TOKEN_SLICES["future"], :])

    def forward(self, x_t, t, past, traj_pos, traj_face, beta, text, drop_past, drop_text):
        if x_t.shape[-1] != self.config.feature_dim or past.shape[-1] != self.config.feature_dim:
            raise ShapeMismatch(
                f"feature dim {x_t.shape[-1]} vs config {self.config.feature_dim}"
            )
        tokens = self.build_tokens(
            x_t, t, past, traj_pos, traj_face, beta, text, drop_past, drop_text
        )
        return self.encode_tokens(tokens)


class DenoiserModel:
    """Inference wrapper: module in eval mode + normalization stats + schedule
    + the skeleton the features live on."""

    def __init__(
        self,
        module: MotionDenoiser,
        stats: NormStats,
        schedule: DiffusionSchedule,
        personas: list | None = None,
        template: Skeleton | None = None,
        blend_matrix: np.ndarray | None = None,
    ):
        self.module = module
        self.stats = stats
        self.schedule = schedule
        self.personas = personas or []
        self.template = template
        self.blend_matrix = blend_matrix

    @property
    def config(self) -> DenoiserConfig:
        return self.module.config

    def predict_x0(
        self, x_t: np.ndarray, t: int, bundle: ConditionBundle, drop_past: bool = False
    ) -> np.ndarray:
        self.module.eval()
        with torch.no_grad():
            out = self.module(
                torch.as_tensor(x_t, dtype=torch.float32).unsqueeze(0),
                torch.tensor([t]),
                torch.as_tensor(bundle.past, dtype=torch.float32).unsqueeze(0),
                torch.as_tensor(bundle.traj_pos, dtype=torch.float32).unsqueeze(0),
                torch.as_tensor(bundle.traj_facing, dtype=torch.float32).unsqueeze(0),
                torch.as_tensor(bundle.beta, dtype=torch.float32).unsqueeze(0),
                torch.as_tensor(bundle.text, dtype=torch.float32).unsqueeze(0),
                torch.tensor([drop_past or bundle.drop_past]),
                torch.tensor([bundle.drop_text]),
            )
        out = out.squeeze(0).double().numpy()
        if not np.all(np.isfinite(out)):
            raise NonFiniteActivation("denoiser produced non-finite output")
        return out


# ---------------------------------------------------------------------------
# Differentiable kinematics and the loss suite

def rot6d_to_matrix_torch(r6: torch.Tensor) -> torch.Tensor:
    """(..., 6) -> (..., 3, 3) via eps-guarded Gram-Schmidt (no rejection)."""
    a, b = r6[..., :3], r6[..., 3:]
    x = a / a.norm(dim=-1, keepdim=True).clamp_min(1e-8)
    y = b - (x * b).sum(dim=-1, keepdim=True) * x
    y = y / y.norm(dim=-1, keepdim=True).clamp_min(1e-8)
    z = torch.cross(x, y, dim=-1)
    return torch.stack([x, y, z], dim=-1)


def fk_torch(
    root: torch.Tensor,        # (..., 3)
    rot6d: torch.Tensor,       # (..., J, 6)
    offsets: torch.Tensor,     # broadcastable to (..., J, 3)
    parents: tuple[int, ...],
) -> torch.Tensor:
    """World joint positions (..., J, 3); differentiable."""
    local = rot6d_to_matrix_torch(rot6d)
    pos = [root]
    world = [local[..., 0, :, :]]
    for j in range(1, len(parents)):
        p = parents[j]
        off = offsets[..., j, :] if offsets.dim() > 2 else offsets[j]
        pos.append(pos[p] + (world[p] @ off.unsqueeze(-1)).squeeze(-1))
        world.append(world[p] @ local[..., j, :, :])
    return torch.stack(pos, dim=-2)


def features_to_fk_inputs(
    feats: torch.Tensor, num_joints: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Denormalized feature rows -> (root positions, 6D rotations).

    Mirrors decode_features: ground-plane roots integrate the displacement
    channels from the first frame's absolutes (so the geometric losses
    penalize accumulated path drift in meters), root height reads the
    absolute channel per frame.
    """
    o0 = feats[..., :1, 0:3]
    d = feats[..., 3:6]
    cum = o0 + torch.cumsum(
        torch.cat([torch.zeros_like(d[..., :1, :]), d[..., 1:, :]], dim=-2), dim=-2
    )
    root = torch.stack(
        [cum[..., 0], feats[..., 1], cum[..., 2]], dim=-1
    )
    r6 = feats[..., 6 : 6 + 6 * num_joints].reshape(*feats.shape[:-1], num_joints, 6)
    return root, r6


@dataclass
class LossReport:
    l_samp: float
    l_pos: float
    l_vel: float
    l_foot: float

    @property
    def total(self) -> float:
        return self.l_samp + LAMBDA_POS * self.l_pos + LAMBDA_VEL * self.l_vel + LAMBDA_FOOT * self.l_foot


def loss_terms(
    x_hat0: torch.Tensor,      # (B, 45, F) normalized
    x0: torch.Tensor,          # (B, 45, F) normalized
    mean: torch.Tensor,        # (F,)
    std: torch.Tensor,         # (F,)
    offsets: torch.Tensor,     # (B, J, 3) shape-regressed rest offsets
    parents: tuple[int, ...],
    foot_indices: tuple[int, ...],
    contacts: torch.Tensor,    # (B, 45, n_feet) bool
) -> dict[str, torch.Tensor]:
    if x_hat0.shape != x0.shape:
        raise ShapeMismatch(f"{tuple(x_hat0.shape)} vs {tuple(x0.shape)}")
    b, n, _ = x_hat0.shape
    j = len(parents)
    l_samp = ((x_hat0 - x0) ** 2).mean()

    pred = x_hat0 * std + mean
    gt = x0 * std + mean
    root_p, r6_p = features_to_fk_inputs(pred, j)
    root_g, r6_g = features_to_fk_inputs(gt, j)
    off = offsets.unsqueeze(1)  # broadcast over frames
    pos_p = fk_torch(root_p, r6_p, off.expand(b, n, j, 3), parents)
    pos_g = fk_torch(root_g, r6_g, off.expand(b, n, j, 3), parents)
    l_pos = ((pos_p - pos_g) ** 2).mean()

    vel_p = (pos_p[:, 2:] - pos_p[:, :-2]) / 2.0
    vel_g = (pos_g[:, 2:] - pos_g[:, :-2]) / 2.0
    l_vel = ((vel_p - vel_g) ** 2).mean()

    feet = list(foot_indices)
    foot_p = pos_p[:, :, feet, :]                      # (B, 45, nf, 3)
    c = contacts.to(x_hat0.dtype)                      # (B, 45, nf)
    height_sq = foot_p[..., 1] ** 2
    foot_v = (foot_p[:, 2:] - foot_p[:, :-2]) / 2.0    # interior frames only
    vel_sq = (foot_v**2).sum(dim=-1)
    # velocity counts only where the whole stencil is in stance, so boundary
    # frames whose neighbors are airborne do not leak swing motion in
    c_stencil = c[:, :-2] * c[:, 1:-1] * c[:, 2:]
    l_foot = (height_sq * c).sum() / b + (vel_sq * c_stencil).sum() / b

    return {"l_samp": l_samp, "l_pos": l_pos, "l_vel": l_vel, "l_foot": l_foot}


def combine_losses(terms: dict[str, torch.Tensor]) -> torch.Tensor:
    return (
        terms["l_samp"]
        + LAMBDA_POS * terms["l_pos"]
        + LAMBDA_VEL * terms["l_vel"]
        + LAMBDA_FOOT * terms["l_foot"]
    )


def compute_losses(
    x_hat0: torch.Tensor,
    x0: torch.Tensor,
    stats: NormStats,
    skeleton: Skeleton,
    offsets: torch.Tensor,
    contacts: torch.Tensor,
) -> tuple[torch.Tensor, LossReport]:
    """Full loss on one batch given the shape-regressed skeleton offsets."""
    terms = loss_terms(
        x_hat0,
        x0,
        torch.as_tensor(stats.mean, dtype=x_hat0.dtype),
        torch.as_tensor(stats.std, dtype=x_hat0.dtype),
        offsets,
        skeleton.parent_index,
        skeleton.foot_joint_indices,
        contacts,
    )
    report = LossReport(
        l_samp=float(terms["l_samp"]),
        l_pos=float(terms["l_pos"]),
        l_vel=float(terms["l_vel"]),
        l_foot=float(terms["l_foot"]),
    )
    return combine_losses(terms), report


# ---------------------------------------------------------------------------
# Checkpoint: magic, version u32, header-length u32, JSON header, float32
# tensor blobs laid out per the header's name/offset table. Bitwise stable.

def _schedule_to_header(schedule: DiffusionSchedule) -> dict:
    return schedule.to_dict()


def _skeleton_to_header(skeleton: Skeleton | None, blend: np.ndarray | None) -> dict | None:
    if skeleton is None:
        return None
    return {
        "joint_names": list(skeleton.joint_names),
        "parents": list(skeleton.parent_index),
        "offsets": skeleton.rest_offsets.tolist(),
        "foot_indices": list(skeleton.foot_joint_indices),
        "leg_segments": {
            "upper": list(skeleton.leg_upper_indices),
            "lower": list(skeleton.leg_lower_indices),
        },
        "blend_matrix": None if blend is None else np.asarray(blend).reshape(-1).tolist(),
    }


def _skeleton_from_header(doc: dict | None) -> tuple[Skeleton | None, np.ndarray | None]:
    if doc is None:
        return None, None
    skel = Skeleton(
        joint_names=tuple(doc["joint_names"]),
        parent_index=tuple(doc["parents"]),
        rest_offsets=np.asarray(doc["offsets"], dtype=np.float64),
        foot_joint_indices=tuple(doc["foot_indices"]),
        leg_upper_indices=tuple(doc["leg_segments"]["upper"]),
        leg_lower_indices=tuple(doc["leg_segments"]["lower"]),
    )
    blend = doc.get("blend_matrix")
    if blend is not None:
        blend = np.asarray(blend, dtype=np.float64).reshape(3 * skel.num_joints, 10)
    return skel, blend


def save_checkpoint(
    path: str | Path,
    module: MotionDenoiser,
    stats: NormStats,
    schedule: DiffusionSchedule,
    personas: list | None = None,
    extra_tensors: dict[str, np.ndarray] | None = None,
    skeleton: Skeleton | None = None,
    blend_matrix: np.ndarray | None = None,
) -> None:
    state = module.state_dict()
    names = sorted(state.keys())
    blobs: list[bytes] = []
    table = []
    offset = 0
    entries: list[tuple[str, np.ndarray]] = [
        (f"param/{n}", state[n].detach().cpu().numpy().astype("<f4", copy=False))
        for n in names
    ]
    for n in sorted((extra_tensors or {}).keys()):
        entries.append((f"extra/{n}", np.asarray(extra_tensors[n], dtype="<f4")))
    for name, arr in entries:
        raw = arr.tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "size": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "config": asdict(module.config),
        "norm_stats": stats.to_dict(),
        "schedule": _schedule_to_header(schedule),
        "personas": personas or [],
        "skeleton": _skeleton_to_header(skeleton, blend_matrix),
        "tensors": table,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<II", CKPT_VERSION, len(hbytes)))
        f.write(hbytes)
        for b in blobs:
            f.write(b)


def load_checkpoint(
    path: str | Path, expect_config: DenoiserConfig | None = None
) -> tuple[DenoiserModel, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != CKPT_MAGIC:
        raise ParseError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CKPT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}")
    if len(raw) < 12 + hlen:
        raise ParseError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
        config = DenoiserConfig(**header["config"])
        stats = NormStats.from_dict(header["norm_stats"])
        schedule = DiffusionSchedule.from_dict(header["schedule"])
        table = header["tensors"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: bad header: {e}") from e
    if expect_config is not None and asdict(expect_config) != asdict(config):
        raise ConfigMismatch(f"{path}: checkpoint config {asdict(config)} != requested")

    body = raw[12 + hlen :]
    state = {}
    extras: dict[str, np.ndarray] = {}
    for entry in table:
        start, size = entry["offset"], entry["size"]
        if start + size > len(body):
            raise ParseError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(body[start : start + size], dtype="<f4").reshape(entry["shape"])
        name = entry["name"]
        if name.startswith("param/"):
            state[name[len("param/"):]] = torch.from_numpy(arr.copy())
        elif name.startswith("extra/"):
            extras[name[len("extra/"):]] = arr.copy()
    module = MotionDenoiser(config)
    try:
        module.load_state_dict(state)
    except RuntimeError as e:
        raise ParseError(f"{path}: state dict mismatch: {e}") from e
    module.eval()
    template, blend = _skeleton_from_header(header.get("skeleton"))
    model = DenoiserModel(
        module, stats, schedule,
        personas=header.get("personas", []),
        template=template,
        blend_matrix=blend,
    )
    return model, extras
