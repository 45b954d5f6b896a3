"""Dataset assembly and the denoiser training loop.

Every batch applies the full on-the-fly recipe: shape perturbation with
displacement rescaling, paraphrase sampling, condition dropout, a uniform
timestep draw, forward noising and in-diffusion blending. Batch assembly is
driven by an explicit numpy generator and windows are ordered by
(clip_id, start), so a fixed seed reproduces training bitwise.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augmentation import (
    ParaphraseBank,
    load_paraphrase_bank,
    perturb_shape,
    rescale_window,
    sample_paraphrase,
)
from .conditioning import (
    ConditionBundle,
    PersonaSpec,
    TextEmbedding,
    assemble_bundle,
    get_provider,
    load_persona,
)
from .config import Config
from .denoiser import (
    DenoiserModel,
    LossReport,
    MotionDenoiser,
    combine_losses,
    loss_terms,
    save_checkpoint,
)
from .diffusion import DiffusionSchedule, blend_in_diffusion, make_schedule, q_sample
from .errors import DegenerateShape, InsufficientData, NonFiniteGradient
from .kinematics import Skeleton, load_skeleton, skeleton_from_shape
from .motion_data import (
    FUTURE_LEN,
    NormStats,
    TrainingWindow,
    extract_windows,
    load_clip,
    load_manifest,
)


@dataclass
class TrainDataset:
    """Windows + personas + paraphrase bank + normalization, ready to batch."""

    windows: list[TrainingWindow]
    personas: dict[str, PersonaSpec]
    bank: ParaphraseBank
    stats: NormStats
    template: Skeleton
    blend_matrix: np.ndarray
    embedding_cache: dict[str, TextEmbedding] = field(default_factory=dict)

    def embedding_for(self, text: str, provider) -> TextEmbedding:
        if text not in self.embedding_cache:
            self.embedding_cache[text] = provider.embed_text(text)
        return self.embedding_cache[text]


def load_dataset(data_dir: str | Path, window_stride: int = 5) -> TrainDataset:
    """Load a dataset directory: manifest.json, skeleton.json, personas/,
    paraphrases.json, clips referenced by the manifest."""
    data_dir = Path(data_dir)
    manifest = load_manifest(data_dir / "manifest.json")
    template, blend = load_skeleton(data_dir / "skeleton.json")
    personas = {}
    for pf in sorted((data_dir / "personas").glob("*.json")):
        p = load_persona(pf)
        personas[p.persona_id] = p
    bank_path = data_dir / "paraphrases.json"
    if bank_path.exists():
        bank = load_paraphrase_bank(bank_path)
    else:
        bank = ParaphraseBank({pid: [p.text] for pid, p in personas.items()})

    windows: list[TrainingWindow] = []
    for entry in manifest:
        clip = load_clip(entry["clip_path"])
        pid = entry["persona_id"]
        if pid not in personas:
            raise InsufficientData(f"manifest references unknown persona {pid!r}")
        windows.extend(
            extract_windows(
                clip,
                window_stride,
                beta=personas[pid].beta,
                text_key=pid,
                clip_id=Path(entry["clip_path"]).stem,
            )
        )
    if not windows:
        raise InsufficientData("dataset produced no training windows")
    windows.sort(key=lambda w: (w.clip_id, w.start))
    feats = np.concatenate([np.concatenate([w.past, w.future]) for w in windows])
    stats = NormStats.from_features(feats)
    return TrainDataset(
        windows=windows,
        personas=personas,
        bank=bank,
        stats=stats,
        template=template,
        blend_matrix=blend,
    )


def prepare_batch(
    dataset: TrainDataset,
    batch_windows: list[TrainingWindow],
    schedule: DiffusionSchedule,
    cfg: Config,
    rng: np.random.Generator,
    provider,
    augment: bool = True,
) -> dict[str, torch.Tensor]:
    """Augment, assemble conditions, noise and blend one batch."""
    stats = dataset.stats
    n_feet = len(dataset.template.foot_joint_indices)
    rows = []
    for window in batch_windows:
        if augment:
            beta_t = perturb_shape(
                window.beta, rng, cfg.aug.sigma_beta1, cfg.aug.sigma_beta_rest
            )
            try:
                window = rescale_window(
                    window, beta_t, dataset.template, dataset.blend_matrix,
                    cfg.aug.eq3_orientation,
                )
            except DegenerateShape:
                pass  # keep the unperturbed window for this sample
        text = sample_paraphrase(dataset.bank, window.text_key, rng)
        emb = dataset.embedding_for(text, provider)
        persona = dataset.personas[window.text_key]
        bundle = assemble_bundle(
            window, persona, stats, rng,
            p_drop_past=cfg.train.p_drop_past,
            p_drop_text=cfg.train.p_drop_text,
            training=True,
            text_embedding=emb,
        )
        t = int(rng.integers(0, schedule.T))
        x0 = stats.normalize(window.future)
        eps = rng.standard_normal(x0.shape)
        x_t = blend_in_diffusion(q_sample(x0, t, eps, schedule), bundle.cp_end, cfg.diff.blend_M)
        offsets = skeleton_from_shape(
            window.beta, dataset.template, dataset.blend_matrix
        ).rest_offsets
        contacts = (
            window.contacts
            if window.contacts is not None
            else np.zeros((FUTURE_LEN, n_feet), dtype=bool)
        )
        rows.append((x_t, t, x0, bundle, offsets, contacts))

    def stack(fn, dtype=torch.float32):
        return torch.as_tensor(np.stack([fn(r) for r in rows]), dtype=dtype)

    return {
        "x_t": stack(lambda r: r[0]),
        "t": torch.as_tensor([r[1] for r in rows], dtype=torch.long),
        "x0": stack(lambda r: r[2]),
        "past": stack(lambda r: r[3].past),
        "traj_pos": stack(lambda r: r[3].traj_pos),
        "traj_face": stack(lambda r: r[3].traj_facing),
        "beta": stack(lambda r: r[3].beta),
        "text": stack(lambda r: r[3].text),
        "drop_past": torch.as_tensor([r[3].drop_past for r in rows]),
        "drop_text": torch.as_tensor([r[3].drop_text for r in rows]),
        "offsets": stack(lambda r: r[4]),
        "contacts": torch.as_tensor(np.stack([r[5] for r in rows])),
    }


def train_step(
    module: MotionDenoiser,
    optimizer: torch.optim.Optimizer,
    dataset: TrainDataset,
    batch_windows: list[TrainingWindow],
    schedule: DiffusionSchedule,
    cfg: Config,
    rng: np.random.Generator,
    provider,
) -> LossReport:
    """One optimization step; raises NonFiniteGradient and skips the update
    if any gradient is non-finite."""
    if not batch_windows:
        raise ValueError("empty batch")
    batch = prepare_batch(dataset, batch_windows, schedule, cfg, rng, provider)
    module.train()
    x_hat0 = module(
        batch["x_t"], batch["t"], batch["past"], batch["traj_pos"],
        batch["traj_face"], batch["beta"], batch["text"],
        batch["drop_past"], batch["drop_text"],
    )
    terms = loss_terms(
        x_hat0,
        batch["x0"],
        torch.as_tensor(dataset.stats.mean, dtype=torch.float32),
        torch.as_tensor(dataset.stats.std, dtype=torch.float32),
        batch["offsets"],
        dataset.template.parent_index,
        dataset.template.foot_joint_indices,
        batch["contacts"],
    )
    total = combine_losses(terms)
    optimizer.zero_grad()
    total.backward()
    for name, p in module.named_parameters():
        if p.grad is not None and not torch.all(torch.isfinite(p.grad)):
            optimizer.zero_grad()
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    optimizer.step()
    return LossReport(
        l_samp=float(terms["l_samp"].detach()),
        l_pos=float(terms["l_pos"].detach()),
        l_vel=float(terms["l_vel"].detach()),
        l_foot=float(terms["l_foot"].detach()),
    )


def build_prior_cache(
    dataset: TrainDataset, count: int, rng: np.random.Generator, provider
) -> dict[str, np.ndarray]:
    """Inference-mode condition bundles sampled from the training windows,
    stored in the checkpoint for later prior-preservation fine-tuning."""
    count = min(count, len(dataset.windows))
    idx = rng.choice(len(dataset.windows), size=count, replace=False)
    parts = {"past": [], "traj_pos": [], "traj_face": [], "beta": [], "text": []}
    for i in sorted(int(i) for i in idx):
        w = dataset.windows[i]
        persona = dataset.personas[w.text_key]
        b = assemble_bundle(w, persona, dataset.stats, training=False)
        parts["past"].append(b.past)
        parts["traj_pos"].append(b.traj_pos)
        parts["traj_face"].append(b.traj_facing)
        parts["beta"].append(b.beta)
        parts["text"].append(b.text)
    return {f"prior/{k}": np.stack(v).astype(np.float32) for k, v in parts.items()}


def prior_bundles_from_cache(extras: dict[str, np.ndarray]) -> list[ConditionBundle]:
    if "prior/past" not in extras:
        return []
    n = extras["prior/past"].shape[0]
    return [
        ConditionBundle(
            past=extras["prior/past"][i].astype(np.float64),
            traj_pos=extras["prior/traj_pos"][i].astype(np.float64),
            traj_facing=extras["prior/traj_face"][i].astype(np.float64),
            beta=extras["prior/beta"][i].astype(np.float64),
            text=extras["prior/text"][i].astype(np.float64),
        )
        for i in range(n)
    ]


def persona_header(personas: dict[str, PersonaSpec]) -> list[dict]:
    return [
        {
            "persona_id": p.persona_id,
            "beta": p.beta.beta.tolist(),
            "text": p.text,
            "embedding": p.embedding.vec.tolist(),
            "identifier_token": p.identifier_token,
        }
        for _, p in sorted(personas.items())
    ]


def train_model(
    dataset: TrainDataset,
    cfg: Config,
    seed: int,
    out_path: str | Path,
    steps: int | None = None,
    log=print,
) -> tuple[DenoiserModel, list[float]]:
    """Train from scratch on a dataset and write a checkpoint."""
    steps = steps if steps is not None else cfg.train.steps
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    provider = get_provider()
    schedule = make_schedule(cfg.diff.T, cfg.diff.beta_min, cfg.diff.beta_max)
    module = MotionDenoiser(cfg.model)
    optimizer = torch.optim.Adam(module.parameters(), lr=cfg.train.lr)

    history: list[float] = []
    t0 = time.time()
    for step in range(steps):
        idx = rng.integers(0, len(dataset.windows), size=cfg.train.batch_size)
        batch = [dataset.windows[int(i)] for i in idx]
        report = train_step(module, optimizer, dataset, batch, schedule, cfg, rng, provider)
        history.append(report.total)
        if cfg.train.log_every and (step + 1) % cfg.train.log_every == 0:
            recent = float(np.mean(history[-cfg.train.log_every:]))
            log(f"step {step + 1}/{steps} loss {recent:.5f} ({time.time() - t0:.0f}s)")

    extras = build_prior_cache(dataset, cfg.train.prior_cache, rng, provider)
    save_checkpoint(
        out_path, module, dataset.stats, schedule,
        personas=persona_header(dataset.personas),
        extra_tensors=extras,
        skeleton=dataset.template,
        blend_matrix=dataset.blend_matrix,
    )
    module.eval()
    model = DenoiserModel(
        module, dataset.stats, schedule,
        personas=persona_header(dataset.personas),
        template=dataset.template,
        blend_matrix=dataset.blend_matrix,
    )
    return model, history
