"""On-the-fly shape perturbation with motion rescaling, paraphrase sampling.

Shape noise: component 1 gets Normal(0, sigma=0.2), components 2..10 get
i.i.d. Normal(0, sigma=0.5); the small first-component sigma limits body
expansion. After perturbing, per-frame root displacements are rescaled by
the leg-length ratio and re-integrated so longer legs cover proportionally
more ground.

`eq3_orientation="corrected"` (default) scales by new/old leg length, which
is the direction that keeps stance feet planted under uniform limb scaling;
"paper" selects the reciprocal as printed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ParseError, UnknownPersona
from .kinematics import (
    Pose,
    ShapeVector,
    Skeleton,
    forward_kinematics,
    leg_length,
    skeleton_from_shape,
)
from .motion_data import PAST_LEN, MotionClip, TrainingWindow, decode_features

DEFAULT_SIGMA_BETA1 = 0.2
DEFAULT_SIGMA_BETA_REST = 0.5


def perturb_shape(
    beta: ShapeVector,
    rng: np.random.Generator,
    sigma_beta1: float = DEFAULT_SIGMA_BETA1,
    sigma_beta_rest: float = DEFAULT_SIGMA_BETA_REST,
) -> ShapeVector:
    noise = np.empty(10)
    noise[0] = rng.normal(0.0, sigma_beta1)
    noise[1:] = rng.normal(0.0, sigma_beta_rest, size=9)
    return ShapeVector(beta.beta + noise)


def _leg_ratio(
    beta: ShapeVector,
    beta_tilde: ShapeVector,
    template: Skeleton,
    blend_matrix: np.ndarray,
    orientation: str,
) -> float:
    old = leg_length(skeleton_from_shape(beta, template, blend_matrix))
    new = leg_length(skeleton_from_shape(beta_tilde, template, blend_matrix))
    corrected = (new["upper"] + new["lower"]) / (old["upper"] + old["lower"])
    if orientation == "corrected":
        return corrected
    if orientation == "paper":
        return 1.0 / corrected
    raise ValueError(f"unknown eq3_orientation {orientation!r}")


def _lowest_foot_height(root: np.ndarray, rot: np.ndarray, skeleton: Skeleton) -> float:
    p = forward_kinematics(Pose(root.copy(), rot.copy()), skeleton)
    return float(min(p[i][1] for i in skeleton.foot_joint_indices))


def rescale_root_displacement(
    clip: MotionClip,
    beta: ShapeVector,
    beta_tilde: ShapeVector,
    template: Skeleton,
    blend_matrix: np.ndarray,
    orientation: str = "corrected",
) -> MotionClip:
    """Scale per-frame root displacement by the leg-length ratio.

    Root positions are re-integrated from the first frame; rotations are
    untouched. Root height is then shifted so the lowest FK foot height at
    frame 1 matches its pre-rescale value (prevents floating/penetration on
    the new skeleton).
    """
    scale = _leg_ratio(beta, beta_tilde, template, blend_matrix, orientation)
    o = clip.root_positions
    disp = np.empty_like(o)
    disp[0] = 0.0
    disp[1:] = (o[1:] - o[:-1]) * scale
    new_o = o[0] + np.cumsum(disp, axis=0)

    skel_old = skeleton_from_shape(beta, template, blend_matrix)
    skel_new = skeleton_from_shape(beta_tilde, template, blend_matrix)
    h_old = _lowest_foot_height(o[0], clip.rotations[0], skel_old)
    h_new = _lowest_foot_height(new_o[0], clip.rotations[0], skel_new)
    new_o[:, 1] += h_old - h_new

    return MotionClip(
        skeleton_id=clip.skeleton_id,
        fps=clip.fps,
        root_positions=new_o,
        rotations=clip.rotations.copy(),
        contacts=None if clip.contacts is None else clip.contacts.copy(),
        persona_id=clip.persona_id,
    )


def rescale_window(
    window: TrainingWindow,
    beta_tilde: ShapeVector,
    template: Skeleton,
    blend_matrix: np.ndarray,
    orientation: str = "corrected",
) -> TrainingWindow:
    """Window-level version of the displacement rescale, for training batches.

    Features' dO channels scale by the leg ratio, o re-integrates across the
    55-frame window, traj positions follow the new root path, and the window
    is re-labeled with the perturbed shape.
    """
    scale = _leg_ratio(window.beta, beta_tilde, template, blend_matrix, orientation)
    feats = np.concatenate([window.past, window.future], axis=0).copy()
    o = feats[:, 0:3]
    disp = np.empty_like(o)
    disp[0] = 0.0
    disp[1:] = (o[1:] - o[:-1]) * scale
    new_o = o[0] + np.cumsum(disp, axis=0)

    num_joints = (feats.shape[1] - 6) // 12
    skel_old = skeleton_from_shape(window.beta, template, blend_matrix)
    skel_new = skeleton_from_shape(beta_tilde, template, blend_matrix)
    _, rots = decode_features(feats[:1], num_joints)
    h_old = _lowest_foot_height(o[0].copy(), rots[0], skel_old)
    h_new = _lowest_foot_height(new_o[0].copy(), rots[0], skel_new)
    new_o[:, 1] += h_old - h_new

    feats[:, 0:3] = new_o
    feats[:, 3:6] *= scale
    return TrainingWindow(
        past=feats[:PAST_LEN],
        future=feats[PAST_LEN:],
        traj_pos=feats[PAST_LEN:, [0, 2]].copy(),
        traj_facing=window.traj_facing.copy(),
        beta=beta_tilde,
        text_key=window.text_key,
        contacts=None if window.contacts is None else window.contacts.copy(),
        clip_id=window.clip_id,
        start=window.start,
    )


@dataclass(frozen=True)
class ParaphraseBank:
    """persona_id -> textual variants; variant 0 is the canonical text."""

    variants: dict[str, list[str]]

    def __post_init__(self):
        for pid, texts in self.variants.items():
            if not texts:
                raise ValueError(f"persona {pid!r} has no text variants")

    def canonical(self, persona_id: str) -> str:
        if persona_id not in self.variants:
            raise UnknownPersona(persona_id)
        return self.variants[persona_id][0]


def sample_paraphrase(bank: ParaphraseBank, persona_id: str, rng: np.random.Generator) -> str:
    if persona_id not in bank.variants:
        raise UnknownPersona(persona_id)
    texts = bank.variants[persona_id]
    return texts[int(rng.integers(0, len(texts)))]


def save_paraphrase_bank(path: str | Path, bank: ParaphraseBank) -> None:
    doc = {
        pid: {"canonical_text": v[0], "variants": list(v)}
        for pid, v in bank.variants.items()
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_paraphrase_bank(path: str | Path) -> ParaphraseBank:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e}") from e
    variants = {}
    for pid, entry in doc.items():
        texts = list(entry["variants"])
        if not texts or texts[0] != entry.get("canonical_text", texts[0]):
            raise ParseError(f"{path}: persona {pid!r} canonical text must be variant 0")
        variants[pid] = texts
    return ParaphraseBank(variants=variants)
