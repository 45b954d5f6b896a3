"""Command-line interface.

Subcommands: synth-data, train, sample, eval, finetune, serve. Global flags
--config (TOML) and --seed apply to all. Exit codes: 0 success, 2 usage
error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import desk_config, load_config
from .errors import PersonaLocoError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="personaloco",
        description="Characteristics-aware locomotion: train, sample, evaluate, serve.",
    )
    parser.add_argument("--config", help="TOML config file (preset='desk' for desk scale)")
    parser.add_argument("--seed", type=int, default=0, help="global random seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the synthetic gait corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--personas", type=int, default=4)
    p.add_argument("--clips-per-persona", type=int, default=10)
    p.add_argument("--frames", type=int, default=240)

    p = sub.add_parser("train", help="train a denoiser on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, help="override config train.steps")

    p = sub.add_parser("sample", help="offline block generation to .mclip")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--persona", required=True)
    p.add_argument("--script", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="run the metric battery")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--script")
    p.add_argument("--out", help="write EvalReport JSON here")
    p.add_argument("--markdown", action="store_true", help="print a markdown table")

    p = sub.add_parser("finetune", help="implant a persona from example clips")
    p.add_argument("--base", required=True)
    p.add_argument("--examples", required=True, help="directory of .mclip files")
    p.add_argument("--steps", type=int, default=400)
    p.add_argument("--out", required=True)
    p.add_argument("--persona-out", required=True)
    p.add_argument("--beta", help="JSON list of 10 shape coefficients")
    p.add_argument("--prior-data", help="dataset dir to rebuild prior conditions from")

    p = sub.add_parser("serve", help="run the streaming service")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--personas", help="directory of persona.json files")
    p.add_argument("--address", default="127.0.0.1:7060")
    return parser


def _cmd_synth_data(args, cfg) -> int:
    from .corpus import generate_corpus

    generate_corpus(
        args.out,
        n_personas=args.personas,
        clips_per_persona=args.clips_per_persona,
        n_frames=args.frames,
        seed=args.seed,
    )
    print(f"corpus written to {args.out}")
    return 0


def _cmd_train(args, cfg) -> int:
    from .training import load_dataset, train_model

    dataset = load_dataset(args.data, window_stride=cfg.train.window_stride)
    print(f"{len(dataset.windows)} windows, {len(dataset.personas)} personas")
    _, history = train_model(dataset, cfg, args.seed, args.out, steps=args.steps)
    print(f"final loss {history[-1]:.5f}; checkpoint at {args.out}")
    return 0


def _cmd_sample(args, cfg) -> int:
    from .conditioning import load_persona
    from .denoiser import load_checkpoint
    from .metrics import ControlScript
    from .motion_data import save_clip
    from .runtime import InputState, generate_scripted_clip

    model, _ = load_checkpoint(args.ckpt)
    persona = load_persona(args.persona)
    script = ControlScript.load(args.script)
    inputs = [InputState.from_script_frame(f) for f in script.frames]
    clip = generate_scripted_clip(model, persona, inputs, cfg, args.seed)
    save_clip(args.out, clip)
    print(f"{clip.num_frames} frames written to {args.out}")
    return 0


def _cmd_eval(args, cfg) -> int:
    from .denoiser import load_checkpoint
    from .metrics import ControlScript, run_eval
    from .training import load_dataset

    model, _ = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data, window_stride=cfg.train.window_stride)
    if args.script:
        script = ControlScript.load(args.script)
    else:
        script = ControlScript.load(Path(args.data) / "control_script.json")
    report = run_eval(model, dataset, script, args.seed, cfg)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
    print(report.to_markdown() if args.markdown else text)
    return 0


def _cmd_finetune(args, cfg) -> int:
    from .conditioning import save_persona
    from .finetune import characterize, fit_shape_to_skeleton
    from .kinematics import ShapeVector, load_skeleton
    from .denoiser import load_checkpoint
    from .motion_data import load_clip

    examples = [load_clip(p) for p in sorted(Path(args.examples).glob("*.mclip"))]
    if args.beta:
        beta_fit = ShapeVector(np.asarray(json.loads(args.beta), dtype=np.float64))
    elif (Path(args.examples) / "skeleton.json").exists():
        model, _ = load_checkpoint(args.base)
        skel, _ = load_skeleton(Path(args.examples) / "skeleton.json")
        beta_fit, res = fit_shape_to_skeleton(skel, model.template, model.blend_matrix)
        print(f"fitted shape from example skeleton (residual {res:.4f} m)")
    else:
        beta_fit = ShapeVector(np.zeros(10))
    prior_bundles = None
    if args.prior_data:
        from .training import build_prior_cache, load_dataset, prior_bundles_from_cache
        from .conditioning import get_provider

        prior_ds = load_dataset(args.prior_data, window_stride=cfg.train.window_stride)
        cache = build_prior_cache(
            prior_ds, cfg.train.prior_cache, np.random.default_rng(args.seed),
            get_provider(),
        )
        prior_bundles = prior_bundles_from_cache(cache)
    _, persona, history = characterize(
        args.base, examples, beta_fit, args.steps, args.seed, cfg, args.out,
        prior_bundles=prior_bundles,
    )
    save_persona(args.persona_out, persona)
    tail = f"; final loss {history[-1]:.5f}" if history else ""
    print(f"implanted {persona.persona_id} (token {persona.identifier_token}){tail}")
    return 0


def _cmd_serve(args, cfg) -> int:
    from .conditioning import PersonaSpec, TextEmbedding, load_persona
    from .denoiser import load_checkpoint
    from .kinematics import ShapeVector
    from .runtime import Service

    model, _ = load_checkpoint(args.ckpt)
    personas = []
    if args.personas:
        for pf in sorted(Path(args.personas).glob("*.json")):
            personas.append(load_persona(pf))
    else:
        for doc in model.personas:
            personas.append(
                PersonaSpec(
                    persona_id=doc["persona_id"],
                    beta=ShapeVector(np.asarray(doc["beta"], dtype=np.float64)),
                    text=doc["text"],
                    embedding=TextEmbedding(np.asarray(doc["embedding"], dtype=np.float64)),
                    identifier_token=doc.get("identifier_token"),
                )
            )
    host, _, port = args.address.rpartition(":")
    service = Service(model, personas, cfg)
    print(f"serving on {host or '127.0.0.1'}:{port} (ctrl-c to stop)")
    try:
        service.serve(host or "127.0.0.1", int(port), seed=args.seed)
    except KeyboardInterrupt:
        service.stop()
        print("shutting down")
    return 0


_COMMANDS = {
    "synth-data": _cmd_synth_data,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "eval": _cmd_eval,
    "finetune": _cmd_finetune,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    cfg = load_config(args.config) if args.config else desk_config()
    try:
        return _COMMANDS[args.command](args, cfg)
    except PersonaLocoError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
