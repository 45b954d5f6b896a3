"""Few-shot example-based characterization via a rare identifier token.

A new persona is implanted by fine-tuning the trained denoiser to
reconstruct windows of the example clips, conditioned on a freshly
allocated rare identifier embedding and the shape fit to the example
skeleton. Each batch mixes example windows with prior-preservation pairs:
condition bundles drawn from the pre-training data with targets generated
once by the frozen base model, which anchors the original personas in place.
"""

from __future__ import annotations

import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .conditioning import (
    ConditionBundle,
    PersonaSpec,
    allocate_identifier,
    assemble_bundle,
    get_provider,
)
from .config import Config
from .denoiser import (
    DenoiserModel,
    LossReport,
    MotionDenoiser,
    combine_losses,
    load_checkpoint,
    loss_terms,
    save_checkpoint,
)
from .diffusion import blend_in_diffusion, q_sample, sample_block
from .errors import InsufficientExamples, NonFiniteGradient, TopologyMismatch
from .kinematics import ShapeVector, Skeleton, check_same_topology, skeleton_from_shape
from .motion_data import (
    FUTURE_LEN,
    MotionClip,
    TrainingWindow,
    detect_contacts,
    extract_windows,
)


def fit_shape_to_skeleton(
    skeleton: Skeleton, template: Skeleton, blend_matrix: np.ndarray
) -> tuple[ShapeVector, float]:
    """Least-squares shape coefficients whose regressed offsets match the
    skeleton; returns (beta, residual norm in meters)."""
    check_same_topology(skeleton, template)
    delta = (skeleton.rest_offsets - template.rest_offsets).reshape(-1)
    beta, residual, _, _ = np.linalg.lstsq(blend_matrix, delta, rcond=None)
    res = float(np.sqrt(residual[0])) if residual.size else float(
        np.linalg.norm(blend_matrix @ beta - delta)
    )
    return ShapeVector(beta), res


@dataclass
class PriorPair:
    """Frozen-base condition bundle plus its cached generated target."""

    bundle: object
    x0_norm: np.ndarray  # (45, F) normalized target
    offsets: np.ndarray  # (J, 3) rest offsets for the bundle's shape


def _build_prior_pairs(
    model: DenoiserModel,
    bundles: list,
    cfg: Config,
    rng: np.random.Generator,
) -> list[PriorPair]:
    pairs = []
    for b in bundles:
        block = sample_block(model, b, cfg.diff.gamma, rng, model.schedule, cfg.diff.blend_M)
        offsets = skeleton_from_shape(
            ShapeVector(b.beta.copy()), model.template, model.blend_matrix
        ).rest_offsets
        pairs.append(PriorPair(bundle=b, x0_norm=model.stats.normalize(block), offsets=offsets))
    return pairs


def characterize(
    base_path: str | Path,
    examples: list[MotionClip],
    beta_fit: ShapeVector,
    steps: int,
    seed: int,
    cfg: Config,
    out_path: str | Path,
    window_stride: int = 2,
    prior_bundles: list | None = None,
    log=print,
) -> tuple[DenoiserModel, PersonaSpec, list[float]]:
    """Implant a new persona into a trained checkpoint.

    With steps == 0 the output checkpoint is a byte-for-byte copy of the
    base; only the persona spec is produced. Fine-tuning touches model
    weights only: schedule, normalization stats and config pass through.
    """
    model, extras = load_checkpoint(base_path)
    if model.template is None:
        raise InsufficientExamples("base checkpoint carries no skeleton")
    total_seconds = sum(c.num_frames / c.fps for c in examples)
    if total_seconds < 5.0:
        raise InsufficientExamples(
            f"examples total {total_seconds:.1f} s of motion; need >= 5 s"
        )

    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    provider = get_provider()
    used = {p.get("identifier_token") for p in model.personas if p.get("identifier_token")}
    token = allocate_identifier(rng, used)
    persona = PersonaSpec(
        persona_id=f"implant-{token}",
        beta=beta_fit,
        text=token,
        embedding=provider.embed_text(token),
        identifier_token=token,
    )

    if steps == 0:
        shutil.copyfile(base_path, out_path)
        return model, persona, []

    skel_fit = skeleton_from_shape(beta_fit, model.template, model.blend_matrix)
    windows: list[TrainingWindow] = []
    for i, clip in enumerate(examples):
        if clip.contacts is None:
            contacts = detect_contacts(clip, skel_fit)
            clip = MotionClip(
                skeleton_id=clip.skeleton_id,
                fps=clip.fps,
                root_positions=clip.root_positions.copy(),
                rotations=clip.rotations.copy(),
                contacts=contacts,
                persona_id=clip.persona_id,
            )
        windows.extend(
            extract_windows(clip, window_stride, beta=beta_fit,
                            text_key=persona.persona_id, clip_id=f"example-{i}")
        )
    if not windows:
        raise InsufficientExamples("example clips yield no training windows")

    from .training import prior_bundles_from_cache

    if prior_bundles is None:
        prior_bundles = prior_bundles_from_cache(extras)
    prior_pairs = _build_prior_pairs(model, prior_bundles, cfg, rng)

    fit_offsets = skel_fit.rest_offsets
    n_feet = len(model.template.foot_joint_indices)
    schedule = model.schedule
    stats = model.stats
    module: MotionDenoiser = model.module
    optimizer = torch.optim.Adam(module.parameters(), lr=cfg.ft.lr)

    n_ex = max(1, cfg.ft.batch_size // 2)
    n_prior = int(round(n_ex * cfg.ft.prior_ratio)) if prior_pairs else 0
    history: list[float] = []

    for step in range(steps):
        rows = []
        idx = rng.integers(0, len(windows), size=n_ex)
        for i in idx:
            w = windows[int(i)]
            bundle = assemble_bundle(
                w, persona, stats, rng,
                p_drop_past=cfg.train.p_drop_past,
                p_drop_text=0.0,
                training=True,
                text_embedding=persona.embedding,
            )
            x0 = stats.normalize(w.future)
            contacts = (
                w.contacts if w.contacts is not None
                else np.zeros((FUTURE_LEN, n_feet), dtype=bool)
            )
            rows.append((bundle, x0, fit_offsets, contacts))
        if n_prior:
            pidx = rng.integers(0, len(prior_pairs), size=n_prior)
            for i in pidx:
                pair = prior_pairs[int(i)]
                drop_past = bool(rng.random() < cfg.train.p_drop_past)
                b = pair.bundle
                bundle = ConditionBundle(
                    past=b.past, traj_pos=b.traj_pos, traj_facing=b.traj_facing,
                    beta=b.beta, text=b.text, drop_past=drop_past,
                )
                rows.append(
                    (bundle, pair.x0_norm, pair.offsets,
                     np.zeros((FUTURE_LEN, n_feet), dtype=bool))
                )

        batch = []
        for bundle, x0, offsets, contacts in rows:
            t = int(rng.integers(0, schedule.T))
            eps = rng.standard_normal(x0.shape)
            x_t = blend_in_diffusion(
                q_sample(x0, t, eps, schedule), bundle.cp_end, cfg.diff.blend_M
            )
            batch.append((x_t, t, x0, bundle, offsets, contacts))

        def stack(fn, dtype=torch.float32):
            return torch.as_tensor(np.stack([fn(r) for r in batch]), dtype=dtype)

        module.train()
        x_hat0 = module(
            stack(lambda r: r[0]),
            torch.as_tensor([r[1] for r in batch], dtype=torch.long),
            stack(lambda r: r[3].past),
            stack(lambda r: r[3].traj_pos),
            stack(lambda r: r[3].traj_facing),
            stack(lambda r: r[3].beta),
            stack(lambda r: r[3].text),
            torch.as_tensor([r[3].drop_past for r in batch]),
            torch.as_tensor([r[3].drop_text for r in batch]),
        )
        terms = loss_terms(
            x_hat0,
            stack(lambda r: r[2]),
            torch.as_tensor(stats.mean, dtype=torch.float32),
            torch.as_tensor(stats.std, dtype=torch.float32),
            stack(lambda r: r[4]),
            model.template.parent_index,
            model.template.foot_joint_indices,
            torch.as_tensor(np.stack([r[5] for r in batch])),
        )
        total = combine_losses(terms)
        optimizer.zero_grad()
        total.backward()
        for name, p in module.named_parameters():
            if p.grad is not None and not torch.all(torch.isfinite(p.grad)):
                raise NonFiniteGradient(f"non-finite gradient in {name}")
        optimizer.step()
        history.append(float(total.detach()))
        if (step + 1) % 100 == 0:
            log(f"finetune step {step + 1}/{steps} loss {np.mean(history[-100:]):.5f}")

    module.eval()
    save_checkpoint(
        out_path, module, stats, schedule,
        personas=model.personas,
        extra_tensors=extras,
        skeleton=model.template,
        blend_matrix=model.blend_matrix,
    )
    return model, persona, history
