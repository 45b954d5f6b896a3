"""Generate the viewer's checked-in fixtures from the primary package:

  frontend/fixtures/fk_fixture.json     — one pose + its FK world positions
  frontend/fixtures/transcript_60s.ndjson — a recorded 60 s server session

The transcript mirrors the live wire stream (skeleton/presets handshake,
then per-frame `frames` messages and per-block `status` messages), each line
wrapped as {"at": seconds, "msg": {...}}.

Usage: python scripts/make_viewer_fixtures.py <checkpoint> <data_dir> [out_dir]
"""

import json
import math
import sys
from pathlib import Path

import numpy as np

from personaloco.config import desk_config
from personaloco.conditioning import PersonaSpec, TextEmbedding
from personaloco.denoiser import load_checkpoint
from personaloco.kinematics import (
    Pose,
    ShapeVector,
    default_skeleton,
    forward_kinematics,
    rot6d_encode,
)
from personaloco.metrics import default_control_script
from personaloco.runtime import FUTURE_LEN, InputState, step_controller, warm_start


def make_fk_fixture(out_path: Path) -> None:
    skel, _ = default_skeleton()
    rng = np.random.default_rng(2024)
    from personaloco.kinematics import rot6d_decode

    rots = []
    for _ in range(skel.num_joints):
        # random small rotations straight from the encoder: valid by construction
        v = rng.normal(size=6)
        v[:3] = v[:3] / np.linalg.norm(v[:3])
        rots.append(rot6d_encode(rot6d_decode(v)))
    rots = np.stack(rots)
    root = np.array([0.31, 0.97, -1.25])
    pos = forward_kinematics(Pose(root, rots), skel)
    doc = {
        "skeleton": {
            "joint_names": list(skel.joint_names),
            "parents": list(skel.parent_index),
            "offsets": skel.rest_offsets.tolist(),
            "foot_indices": list(skel.foot_joint_indices),
        },
        "pose": {"root": root.tolist(), "rot6d": rots.tolist()},
        "positions": pos.tolist(),
    }
    out_path.write_text(json.dumps(doc))
    print(f"wrote {out_path}")


def make_transcript(ckpt: str, out_path: Path, seconds: float = 60.0) -> None:
    cfg = desk_config()
    model, _ = load_checkpoint(ckpt)
    pdoc = model.personas[0]
    persona = PersonaSpec(
        persona_id=pdoc["persona_id"],
        beta=ShapeVector(np.asarray(pdoc["beta"])),
        text=pdoc["text"],
        embedding=TextEmbedding(np.asarray(pdoc["embedding"])),
    )
    state = warm_start(model, persona, seed=11)
    script = default_control_script(fps=cfg.runtime.fps, duration_s=seconds, seed=3)
    inputs = [InputState.from_script_frame(f) for f in script.frames]

    lines = []
    seq = 0

    def emit(at, msg):
        nonlocal seq
        msg = dict(msg)
        msg["seq"] = seq
        seq += 1
        lines.append(json.dumps({"at": round(at, 4), "msg": msg}))

    emit(0.0, {
        "type": "skeleton", "version": 1, "fps": cfg.runtime.fps,
        "joint_names": list(state.skeleton.joint_names),
        "parents": list(state.skeleton.parent_index),
        "offsets": state.skeleton.rest_offsets.tolist(),
        "foot_indices": list(state.skeleton.foot_joint_indices),
    })
    emit(0.0, {"type": "presets", "personas": [
        {"persona_id": p["persona_id"], "beta": p["beta"], "text": p["text"]}
        for p in model.personas
    ]})

    fps = cfg.runtime.fps
    n = len(inputs)
    frame = 0
    while frame < n:
        block_inputs = inputs[frame : frame + FUTURE_LEN]
        poses, _, state = step_controller(state, model, cfg, block_inputs)
        at_block = frame / fps
        emit(at_block, {
            "type": "status", "block_ms": state.last_block_ms,
            "persona_id": persona.persona_id, "deadline_misses": 0,
        })
        for i, pose in enumerate(poses):
            if frame + i >= n:
                break
            emit((frame + i) / fps, {
                "type": "frames", "start_index": frame + i, "fps": fps,
                "poses": [{
                    "root": [round(v, 6) for v in pose.root_position.tolist()],
                    "rot6d": np.round(pose.joint_rotations, 6).tolist(),
                }],
            })
        frame += FUTURE_LEN
    out_path.write_text("\n".join(lines) + "\n")
    print(f"wrote {out_path} ({len(lines)} messages)")


if __name__ == "__main__":
    ckpt = sys.argv[1]
    out_dir = Path(sys.argv[3] if len(sys.argv) > 3 else "frontend/fixtures")
    out_dir.mkdir(parents=True, exist_ok=True)
    make_fk_fixture(out_dir / "fk_fixture.json")
    make_transcript(ckpt, out_dir / "transcript_60s.ndjson")
