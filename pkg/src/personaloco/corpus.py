"""Synthetic desk-scale corpus: procedurally distinct personas with gait
clips, persona files, a paraphrase bank and a dataset manifest.

Four base persona archetypes differ in shape, cadence, stride, arm swing and
posture offsets, so a classifier can separate them cleanly; personas beyond
four cycle the archetypes with shape jitter.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path

import numpy as np

from .augmentation import ParaphraseBank, save_paraphrase_bank
from .conditioning import PersonaSpec, get_provider, save_persona
from .errors import InvalidGaitSpec
from .kinematics import ShapeVector, default_skeleton, save_skeleton, skeleton_from_shape
from .metrics import default_control_script
from .motion_data import GaitSpec, save_clip, save_manifest, synth_gait

_ARCHETYPES = [
    {
        "name": "brisk",
        "beta": [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        "text": ("A 28-year-old man, who is fit and upright, and enjoys morning runs. "
                 "He is moving with a refreshed state."),
        "gait": dict(period_frames=26, stride_m=0.62, arm_swing_rad=0.5,
                     torso_sway_rad=0.04, step_height_m=0.09),
        "style": {},
    },
    {
        "name": "tall-calm",
        "beta": [1.1, 1.6, 0.4, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        "text": ("A 45-year-old woman, who is tall and calm, and likes long hikes. "
                 "She is moving with a neutral state."),
        "gait": dict(period_frames=36, stride_m=0.74, arm_swing_rad=0.28,
                     torso_sway_rad=0.03, step_height_m=0.07, bob_amp_m=0.01),
        "style": {"spine1": (-0.06, 0.0, 0.0)},
    },
    {
        "name": "frail-shuffle",
        "beta": [-1.4, -1.1, -0.5, -0.6, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        "text": ("A 70-year-old man, who is frail and cautious, and tires quickly. "
                 "He is moving with a depressed state."),
        # step height stays above the contact-detection band so swing frames
        # of generated motion cannot read as sliding contact
        "gait": dict(period_frames=24, stride_m=0.34, arm_swing_rad=0.12,
                     torso_sway_rad=0.02, step_height_m=0.07, bob_amp_m=0.008),
        "style": {"spine1": (0.22, 0.0, 0.0), "head": (0.12, 0.0, 0.0)},
    },
    {
        "name": "bouncy",
        "beta": [0.4, 0.2, 0.6, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0],
        "text": ("A 19-year-old woman, who is cheerful and bouncy, and loves dancing. "
                 "She is moving with an excited state."),
        "gait": dict(period_frames=28, stride_m=0.55, arm_swing_rad=0.65,
                     torso_sway_rad=0.12, step_height_m=0.12, bob_amp_m=0.03),
        "style": {"left_collar": (0.0, 0.0, 0.1), "right_collar": (0.0, 0.0, -0.1)},
    },
]

_REPHRASERS = [
    lambda t: t,
    lambda t: t.replace("who is", "who's").replace("He is moving", "He walks")
               .replace("She is moving", "She walks"),
    lambda t: "Picture " + t[0].lower() + t[1:],
    lambda t: t.replace(". He is", ", and he is").replace(". She is", ", and she is"),
    lambda t: t.replace("A ", "This is a ", 1),
]


def make_persona_specs(n_personas: int, provider) -> list[tuple[PersonaSpec, dict, dict]]:
    """(persona, gait kwargs, style offsets) triples for n personas."""
    out = []
    for i in range(n_personas):
        arch = _ARCHETYPES[i % len(_ARCHETYPES)]
        beta = np.asarray(arch["beta"], dtype=np.float64).copy()
        if i >= len(_ARCHETYPES):
            jitter = np.random.default_rng(1000 + i).normal(0.0, 0.3, size=10)
            beta = beta + jitter
        pid = f"p{i}_{arch['name']}"
        persona = PersonaSpec(
            persona_id=pid,
            beta=ShapeVector(beta),
            text=arch["text"],
            embedding=provider.embed_text(arch["text"]),
        )
        out.append((persona, dict(arch["gait"]), dict(arch["style"])))
    return out


def generate_corpus(
    out_dir: str | Path,
    n_personas: int = 4,
    clips_per_persona: int = 10,
    n_frames: int = 240,
    fps: float = 30.0,
    seed: int = 0,
    log=print,
) -> Path:
    out_dir = Path(out_dir)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)
    (out_dir / "personas").mkdir(exist_ok=True)

    template, blend = default_skeleton()
    save_skeleton(out_dir / "skeleton.json", template, blend)
    provider = get_provider()
    rng = np.random.default_rng(seed)

    manifest = []
    bank_variants = {}
    for persona, gait_kwargs, style in make_persona_specs(n_personas, provider):
        skel = skeleton_from_shape(persona.beta, template, blend)
        save_persona(out_dir / "personas" / f"{persona.persona_id}.json", persona)
        bank_variants[persona.persona_id] = [f(persona.text) for f in _REPHRASERS]

        for c in range(clips_per_persona):
            if c == clips_per_persona - 1:
                spec = GaitSpec(style_offsets=style, speed=0.0, **gait_kwargs)
            elif c == clips_per_persona - 2:
                # speed ramp so slow starts are in distribution
                spec = GaitSpec(
                    style_offsets=style, path="line", speed=0.3, speed_end=1.15,
                    **gait_kwargs,
                )
            else:
                path = "line" if c % 2 == 0 else "arc"
                speed = [0.85, 1.0, 1.15][c % 3]
                arc_r = float(rng.uniform(2.0, 5.0))
                spec = GaitSpec(
                    style_offsets=style, path=path, speed=speed,
                    arc_radius_m=arc_r, **gait_kwargs,
                )
            try:
                clip, _ = synth_gait(
                    spec, n_frames=n_frames, skeleton=skel, fps=fps,
                    skeleton_id=persona.persona_id, persona_id=persona.persona_id,
                )
            except InvalidGaitSpec:
                spec = replace(spec, stride_m=spec.stride_m * 0.8)
                clip, _ = synth_gait(
                    spec, n_frames=n_frames, skeleton=skel, fps=fps,
                    skeleton_id=persona.persona_id, persona_id=persona.persona_id,
                )
            rel = f"clips/{persona.persona_id}_c{c}.mclip"
            save_clip(out_dir / rel, clip)
            manifest.append({"clip_path": rel, "persona_id": persona.persona_id})
        log(f"persona {persona.persona_id}: {clips_per_persona} clips")

    save_manifest(out_dir / "manifest.json", manifest)
    save_paraphrase_bank(out_dir / "paraphrases.json", ParaphraseBank(bank_variants))
    default_control_script(fps=fps).save(out_dir / "control_script.json")
    return out_dir


def make_limp_clips(
    beta: ShapeVector,
    template,
    blend,
    n_clips: int = 3,
    n_frames: int = 300,
    fps: float = 30.0,
) -> list:
    """Asymmetric-stance example clips for characterization experiments."""
    skel = skeleton_from_shape(beta, template, blend)
    clips = []
    for c in range(n_clips):
        spec = GaitSpec(
            period_frames=32,
            stride_m=0.4,
            stance_fraction_left=0.78,
            stance_fraction_right=0.42,
            arm_swing_rad=0.2,
            step_height_m=0.06,
            path="line" if c % 2 == 0 else "arc",
            arc_radius_m=4.0,
            speed=[1.0, 0.9, 1.1][c % 3],
            style_offsets={"spine1": (0.1, 0.0, 0.05)},
        )
        clip, _ = synth_gait(spec, n_frames=n_frames, skeleton=skel, fps=fps,
                             skeleton_id="limp", persona_id="limp-example")
        clips.append(clip)
    return clips
