import numpy as np
import pytest
import torch

from personaloco.augmentation import ParaphraseBank
from personaloco.config import desk_config
from personaloco.corpus import make_limp_clips
from personaloco.denoiser import MotionDenoiser, load_checkpoint
from personaloco.errors import InsufficientExamples, TopologyMismatch
from personaloco.finetune import characterize, fit_shape_to_skeleton
from personaloco.kinematics import (
    ShapeVector,
    default_skeleton,
    skeleton_from_shape,
)
from personaloco.motion_data import GaitSpec, synth_gait
from personaloco.training import TrainDataset, train_model


class TestFitShape:
    def test_roundtrip_recovery(self, template_and_blend):
        tmpl, blend = template_and_blend
        rng = np.random.default_rng(0)
        beta = ShapeVector(rng.normal(scale=0.5, size=10))
        skel = skeleton_from_shape(beta, tmpl, blend)
        fit, residual = fit_shape_to_skeleton(skel, tmpl, blend)
        assert np.abs(fit.beta - beta.beta).max() < 1e-6
        assert residual < 1e-9

    def test_template_gives_zero(self, template_and_blend):
        tmpl, blend = template_and_blend
        fit, _ = fit_shape_to_skeleton(tmpl, tmpl, blend)
        assert np.abs(fit.beta).max() < 1e-9

    def test_topology_mismatch(self, template_and_blend):
        from tests.test_kinematics import chain_skeleton

        tmpl, blend = template_and_blend
        other = chain_skeleton(np.zeros((3, 3)) + [[0, 0, 0], [0, -1, 0], [0, -1, 0]])
        with pytest.raises(TopologyMismatch):
            fit_shape_to_skeleton(other, tmpl, blend)


@pytest.fixture(scope="module")
def base_checkpoint(tmp_path_factory):
    """A briefly trained desk model on one persona's gait."""
    from personaloco.conditioning import PersonaSpec, get_provider
    from personaloco.motion_data import NormStats, extract_windows

    tmp = tmp_path_factory.mktemp("ftbase")
    cfg = desk_config()
    cfg.train.batch_size = 8
    cfg.train.log_every = 0
    cfg.train.prior_cache = 6
    clip, _ = synth_gait(GaitSpec(), n_frames=180)
    windows = extract_windows(clip, 5, beta=ShapeVector.zeros(), text_key="p0", clip_id="c")
    feats = np.concatenate([np.concatenate([w.past, w.future]) for w in windows])
    provider = get_provider("hashing")
    persona = PersonaSpec("p0", ShapeVector.zeros(), "base walker", provider.embed_text("base walker"))
    tmpl, blend = default_skeleton()
    ds = TrainDataset(
        windows=windows, personas={"p0": persona},
        bank=ParaphraseBank({"p0": [persona.text]}),
        stats=NormStats.from_features(feats), template=tmpl, blend_matrix=blend,
    )
    path = tmp / "base.plck"
    train_model(ds, cfg, seed=0, out_path=path, steps=30, log=lambda *_: None)
    return path


class TestCharacterize:
    def test_zero_steps_bitwise_identity(self, base_checkpoint, tmp_path):
        cfg = desk_config()
        beta = ShapeVector.zeros()
        tmpl, blend = default_skeleton()
        clips = make_limp_clips(beta, tmpl, blend, n_clips=2, n_frames=160)
        out = tmp_path / "out.plck"
        _, persona, hist = characterize(
            base_checkpoint, clips, beta, steps=0, seed=4, cfg=cfg, out_path=out
        )
        assert out.read_bytes() == base_checkpoint.read_bytes()
        assert hist == []
        assert persona.identifier_token is not None
        assert persona.text == persona.identifier_token

    def test_insufficient_examples(self, base_checkpoint, tmp_path):
        cfg = desk_config()
        beta = ShapeVector.zeros()
        tmpl, blend = default_skeleton()
        clips = make_limp_clips(beta, tmpl, blend, n_clips=1, n_frames=100)  # 3.3 s
        with pytest.raises(InsufficientExamples):
            characterize(
                base_checkpoint, clips, beta, steps=1, seed=0, cfg=cfg,
                out_path=tmp_path / "x.plck",
            )

    def test_finetune_changes_only_weights(self, base_checkpoint, tmp_path):
        cfg = desk_config()
        cfg.ft.batch_size = 6
        beta = ShapeVector.zeros()
        tmpl, blend = default_skeleton()
        clips = make_limp_clips(beta, tmpl, blend, n_clips=2, n_frames=160)
        out = tmp_path / "ft.plck"
        characterize(base_checkpoint, clips, beta, steps=4, seed=4, cfg=cfg, out_path=out)
        base, base_extras = load_checkpoint(base_checkpoint)
        tuned, tuned_extras = load_checkpoint(out)
        assert np.array_equal(base.stats.mean, tuned.stats.mean)
        assert np.array_equal(base.schedule.betas, tuned.schedule.betas)
        assert base.personas == tuned.personas
        for k in base_extras:
            assert np.array_equal(base_extras[k], tuned_extras[k])
        changed = any(
            not torch.equal(p1, p2)
            for p1, p2 in zip(base.module.parameters(), tuned.module.parameters())
        )
        assert changed

    def test_identifier_avoids_used_tokens(self, base_checkpoint, tmp_path):
        import json

        cfg = desk_config()
        beta = ShapeVector.zeros()
        tmpl, blend = default_skeleton()
        clips = make_limp_clips(beta, tmpl, blend, n_clips=2, n_frames=160)
        _, p1, _ = characterize(
            base_checkpoint, clips, beta, steps=0, seed=4, cfg=cfg,
            out_path=tmp_path / "a.plck",
        )
        # mark p1's token as taken inside the checkpoint, re-run with same seed
        model, extras = load_checkpoint(base_checkpoint)
        from personaloco.denoiser import save_checkpoint

        personas = model.personas + [{
            "persona_id": "taken", "beta": [0.0] * 10, "text": p1.identifier_token,
            "embedding": p1.embedding.vec.tolist(),
            "identifier_token": p1.identifier_token,
        }]
        marked = tmp_path / "marked.plck"
        save_checkpoint(
            marked, model.module, model.stats, model.schedule, personas=personas,
            extra_tensors=extras, skeleton=model.template, blend_matrix=model.blend_matrix,
        )
        _, p2, _ = characterize(
            marked, clips, beta, steps=0, seed=4, cfg=cfg, out_path=tmp_path / "b.plck"
        )
        assert p2.identifier_token != p1.identifier_token

    def test_loss_decreases_without_prior(self, base_checkpoint, tmp_path):
        """prior_ratio 0 + one example clip: the reconstruction loss falls
        monotonically between consecutive step windows."""
        cfg = desk_config()
        cfg.ft.prior_ratio = 0.0
        cfg.ft.lr = 1e-4
        cfg.ft.batch_size = 8
        beta = ShapeVector.zeros()
        tmpl, blend = default_skeleton()
        clips = make_limp_clips(beta, tmpl, blend, n_clips=1, n_frames=240)
        _, _, hist = characterize(
            base_checkpoint, clips, beta, steps=240, seed=4, cfg=cfg,
            out_path=tmp_path / "ft.plck", log=lambda *_: None,
        )
        w = 80
        means = [float(np.mean(hist[i : i + w])) for i in range(0, 240, w)]
        assert all(b < a for a, b in zip(means, means[1:])), means
