"""Quantitative battery: FPD, diversity, trajectory errors, foot sliding,
persona classification (CCA/R@3), the prerecorded control script, and a
motion-matching baseline.

Pose features for FPD/diversity/classification drop the root position so the
statistics describe poses, not paths. The Frechet square root is computed as
Tr((S2^{1/2} S1 S2^{1/2})^{1/2}) by symmetric eigendecomposition with
eigenvalues clamped at zero: the stable form of the symmetrized-product
square root at small sample counts. Foot sliding is reported in centimeters
per second of contact (the normalization the number's unit implies is stated
in every report).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .errors import (
    EmptyDatabase,
    InsufficientData,
    LengthMismatch,
    ParseError,
    TooFewSamples,
    UnknownLabel,
)
from .kinematics import Pose, ShapeVector, Skeleton, forward_kinematics, skeleton_from_shape
from .motion_data import (
    FUTURE_LEN,
    MotionClip,
    NormStats,
    TrainingWindow,
    decode_features,
    detect_contacts,
)

FPD_REGULARIZER = 1e-6


def pose_features(features: np.ndarray) -> np.ndarray:
    """Strip the root position channels from feature rows (root-relative)."""
    return np.asarray(features)[..., 3:]


# ---------------------------------------------------------------------------
# Distribution metrics

def _sym_sqrt(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((a + a.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fpd(gen: np.ndarray, ref: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two pose-feature sets."""
    gen = np.asarray(gen, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    d = gen.shape[1]
    if gen.shape[0] < d + 1 or ref.shape[0] < d + 1:
        raise TooFewSamples(f"need >= {d + 1} samples per side for {d}-dim features")
    mu1, mu2 = gen.mean(axis=0), ref.mean(axis=0)
    s1 = np.cov(gen, rowvar=False) + FPD_REGULARIZER * np.eye(d)
    s2 = np.cov(ref, rowvar=False) + FPD_REGULARIZER * np.eye(d)
    rt2 = _sym_sqrt(s2)
    inner = _sym_sqrt(rt2 @ s1 @ rt2)
    val = float(np.sum((mu1 - mu2) ** 2) + np.trace(s1) + np.trace(s2) - 2.0 * np.trace(inner))
    return max(val, 0.0)


def diversity(samples: np.ndarray, k_pairs: int = 200, rng: np.random.Generator | None = None) -> float:
    """Mean L2 distance over k random distinct-index sample pairs."""
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    if n < 2:
        raise TooFewSamples("diversity needs >= 2 samples")
    rng = rng if rng is not None else np.random.default_rng(0)
    total = 0.0
    for _ in range(k_pairs):
        i = int(rng.integers(0, n))
        j = int(rng.integers(0, n - 1))
        if j >= i:
            j += 1
        total += float(np.linalg.norm(samples[i] - samples[j]))
    return total / k_pairs


# ---------------------------------------------------------------------------
# Trajectory and foot metrics

def traj_errors(
    gen_pos_xz: np.ndarray,
    gen_facing: np.ndarray,
    target_pos_xz: np.ndarray,
    target_facing: np.ndarray,
) -> dict[str, float]:
    """TPE (cm) and TDE (degrees, wrapped to [0, 180])."""
    if gen_pos_xz.shape != target_pos_xz.shape or gen_facing.shape != target_facing.shape:
        raise LengthMismatch(
            f"{gen_pos_xz.shape}/{gen_facing.shape} vs {target_pos_xz.shape}/{target_facing.shape}"
        )
    tpe_m = float(np.mean(np.linalg.norm(gen_pos_xz - target_pos_xz, axis=1)))
    ang_gen = np.arctan2(gen_facing[:, 0], gen_facing[:, 1])
    ang_tgt = np.arctan2(target_facing[:, 0], target_facing[:, 1])
    diff = np.abs(np.degrees(np.arctan2(np.sin(ang_gen - ang_tgt), np.cos(ang_gen - ang_tgt))))
    return {"tpe_cm": tpe_m * 100.0, "tde_deg": float(np.mean(diff))}


def fsd(clip: MotionClip, skeleton: Skeleton, contacts: np.ndarray | None = None) -> float:
    """Horizontal foot travel during contact, in cm per second of contact.

    A frame pair contributes when the foot is in contact at both ends; zero
    contact time yields 0.
    """
    if contacts is None:
        contacts = clip.contacts
    if contacts is None:
        contacts = detect_contacts(clip, skeleton)
    n = clip.num_frames
    feet = list(skeleton.foot_joint_indices)
    pos = np.empty((n, len(feet), 2))
    for i in range(n):
        p = forward_kinematics(clip.pose(i), skeleton)
        pos[i] = p[feet][:, [0, 2]]
    both = contacts[1:] & contacts[:-1]
    disp = np.linalg.norm(pos[1:] - pos[:-1], axis=2)
    total_m = float((disp * both).sum())
    contact_seconds = float(both.sum()) / clip.fps
    if contact_seconds == 0.0:
        return 0.0
    return total_m * 100.0 / contact_seconds


def stance_durations(contacts: np.ndarray, min_run: int = 2) -> list[list[int]]:
    """Per-foot lists of complete contact run lengths (frames).

    Runs touching the clip edges are dropped (possibly truncated), as are
    blips shorter than min_run."""
    n = contacts.shape[0]
    out = []
    for f in range(contacts.shape[1]):
        runs = []
        start = None
        for i in range(n):
            if contacts[i, f] and start is None:
                start = i
            elif not contacts[i, f] and start is not None:
                if start > 0 and i - start >= min_run:
                    runs.append(i - start)
                start = None
        # a run still open at the end touches the boundary: dropped
        out.append(runs)
    return out


def stance_asymmetry(contacts: np.ndarray) -> float:
    """(left - right) mean stance duration over their average; 0 = symmetric."""
    runs = stance_durations(contacts)
    if len(runs) < 2 or not runs[0] or not runs[1]:
        return 0.0
    left = float(np.mean(runs[0]))
    right = float(np.mean(runs[1]))
    return (left - right) / ((left + right) / 2.0)


# ---------------------------------------------------------------------------
# Persona classifier (CCA / R@3)

class _ClassifierNet(nn.Module):
    def __init__(self, in_dim: int, token_dim: int, heads: int, layers: int, n_classes: int):
        super().__init__()
        self.proj = nn.Linear(in_dim, token_dim)
        layer = nn.TransformerEncoderLayer(
            d_model=token_dim, nhead=heads, dim_feedforward=4 * token_dim,
            dropout=0.1, batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=layers)
        self.head = nn.Linear(token_dim, n_classes)
        pos = torch.arange(FUTURE_LEN).unsqueeze(1).float()
        i = torch.arange(0, token_dim, 2).float()
        div = torch.exp(-math.log(10000.0) * i / token_dim)
        pe = torch.zeros(FUTURE_LEN, token_dim)
        pe[:, 0::2] = torch.sin(pos * div)
        pe[:, 1::2] = torch.cos(pos * div)
        self.register_buffer("pe", pe, persistent=False)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        h = self.encoder(self.proj(x) + self.pe)
        return h.mean(dim=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.embed(x))


@dataclass
class MotionClassifier:
    net: _ClassifierNet
    persona_ids: list[str]
    stats: NormStats
    centroids: np.ndarray  # (n_personas, token_dim)
    holdout_accuracy: float

    def embed(self, window: TrainingWindow) -> np.ndarray:
        x = pose_features(self.stats.normalize(window.future))
        self.net.eval()
        with torch.no_grad():
            e = self.net.embed(torch.as_tensor(x, dtype=torch.float32).unsqueeze(0))
        return e.squeeze(0).numpy()

    def predict(self, window: TrainingWindow) -> str:
        x = pose_features(self.stats.normalize(window.future))
        self.net.eval()
        with torch.no_grad():
            logits = self.net(torch.as_tensor(x, dtype=torch.float32).unsqueeze(0))
        return self.persona_ids[int(logits.argmax())]


def train_classifier(
    samples: list[tuple[TrainingWindow, str]],
    stats: NormStats,
    seed: int = 0,
    epochs: int = 30,
    token_dim: int = 64,
    heads: int = 4,
    layers: int = 2,
    lr: float = 1e-3,
    batch_size: int = 64,
    min_per_persona: int = 50,
    feature_noise: float = 0.1,
    log=print,
) -> MotionClassifier:
    """Train the persona classifier on (window, persona_id) pairs with a
    held-out split per persona; reports holdout accuracy.

    Gaussian noise on the normalized features during training keeps the
    decision boundaries loose enough to classify generated (slightly
    off-manifold) motion, which is the metric's whole purpose."""
    by_pid: dict[str, list[TrainingWindow]] = {}
    for w, pid in samples:
        by_pid.setdefault(pid, []).append(w)
    if len(by_pid) < 2:
        raise InsufficientData("classifier needs >= 2 personas")
    for pid, ws in by_pid.items():
        if len(ws) < min_per_persona:
            raise InsufficientData(f"persona {pid!r} has {len(ws)} windows; need >= {min_per_persona}")

    persona_ids = sorted(by_pid)
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    train_x, train_y, hold_x, hold_y = [], [], [], []
    for label, pid in enumerate(persona_ids):
        ws = by_pid[pid]
        order = rng.permutation(len(ws))
        n_hold = max(1, len(ws) // 5)
        for pos_, i in enumerate(order):
            x = pose_features(stats.normalize(ws[int(i)].future))
            if pos_ < n_hold:
                hold_x.append(x)
                hold_y.append(label)
            else:
                train_x.append(x)
                train_y.append(label)

    xs = torch.as_tensor(np.stack(train_x), dtype=torch.float32)
    ys = torch.as_tensor(train_y, dtype=torch.long)
    hx = torch.as_tensor(np.stack(hold_x), dtype=torch.float32)
    hy = torch.as_tensor(hold_y, dtype=torch.long)

    net = _ClassifierNet(xs.shape[-1], token_dim, heads, layers, len(persona_ids))
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss()
    n = len(xs)
    for epoch in range(epochs):
        net.train()
        order = rng.permutation(n)
        for s in range(0, n, batch_size):
            idx = torch.as_tensor(order[s : s + batch_size].copy())
            batch = xs[idx]
            if feature_noise > 0.0:
                batch = batch + feature_noise * torch.randn_like(batch)
            opt.zero_grad()
            loss = loss_fn(net(batch), ys[idx])
            loss.backward()
            opt.step()

    net.eval()
    with torch.no_grad():
        acc = float((net(hx).argmax(dim=1) == hy).float().mean())
        embs = net.embed(xs).numpy()
    centroids = np.stack([
        embs[(ys.numpy() == label)].mean(axis=0) for label in range(len(persona_ids))
    ])
    log(f"classifier holdout accuracy {acc:.3f} over {len(persona_ids)} personas")
    return MotionClassifier(
        net=net, persona_ids=persona_ids, stats=stats,
        centroids=centroids, holdout_accuracy=acc,
    )


def cca_and_r3(
    classifier: MotionClassifier,
    labeled_windows: list[tuple[TrainingWindow, str]],
) -> dict[str, float]:
    """Top-1 classification accuracy and top-3 centroid retrieval precision."""
    if not labeled_windows:
        raise InsufficientData("no windows to classify")
    known = set(classifier.persona_ids)
    hits = 0
    r3 = 0
    for window, intended in labeled_windows:
        if intended not in known:
            raise UnknownLabel(intended)
        if classifier.predict(window) == intended:
            hits += 1
        e = classifier.embed(window)
        dists = np.linalg.norm(classifier.centroids - e, axis=1)
        top3 = np.argsort(dists)[:3]
        if classifier.persona_ids.index(intended) in top3:
            r3 += 1
    n = len(labeled_windows)
    return {"cca": hits / n, "r_at_3": r3 / n}


# ---------------------------------------------------------------------------
# Control script

@dataclass
class ControlScript:
    """Per-frame input states for a prerecorded run (default 60 s)."""

    fps: float
    frames: list[dict]  # {move: [x, z] | None, sprint: bool, facing_deg: float | None}

    @property
    def duration_s(self) -> float:
        return len(self.frames) / self.fps

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"fps": self.fps, "frames": self.frames}, sort_keys=True))

    @staticmethod
    def load(path: str | Path) -> "ControlScript":
        try:
            doc = json.loads(Path(path).read_text())
            return ControlScript(fps=float(doc["fps"]), frames=list(doc["frames"]))
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise ParseError(f"{path}: {e}") from e


def default_control_script(fps: float = 30.0, duration_s: float = 60.0, seed: int = 7) -> ControlScript:
    """Deterministic 1-minute keyboard-style recording: walk/sprint segments
    in varying directions with idle pauses and facing overrides."""
    rng = np.random.default_rng(seed)
    n = int(round(fps * duration_s))
    frames: list[dict] = []
    t = 0
    while t < n:
        seg = int(rng.integers(int(1.0 * fps), int(4.0 * fps)))
        kind = rng.random()
        if kind < 0.15:
            move = None
            sprint = False
        else:
            ang = float(rng.uniform(0.0, 2.0 * math.pi))
            move = [math.sin(ang), math.cos(ang)]
            sprint = bool(kind > 0.8)
        facing = None
        if rng.random() < 0.1:
            facing = float(rng.uniform(-180.0, 180.0))
        for _ in range(min(seg, n - t)):
            frames.append({"move": move, "sprint": sprint, "facing_deg": facing})
        t += seg
    return ControlScript(fps=fps, frames=frames[:n])


# ---------------------------------------------------------------------------
# Motion-matching baseline

@dataclass
class MotionMatchDatabase:
    """Two-stage nearest-neighbor store: personas, then their windows."""

    persona_ids: list[str]
    persona_vecs: np.ndarray          # (P, 522) z-scored [beta | text]
    persona_mean: np.ndarray
    persona_std: np.ndarray
    windows_by_persona: dict[str, list[TrainingWindow]]
    clip_feats_by_persona: dict[str, np.ndarray]
    skeletons: dict[str, Skeleton]

    @staticmethod
    def build(
        windows: list[tuple[TrainingWindow, str]],
        personas: dict,
        template: Skeleton,
        blend_matrix: np.ndarray,
    ) -> "MotionMatchDatabase":
        if not windows:
            raise EmptyDatabase("no windows to index")
        ids = sorted({pid for _, pid in windows})
        raw = np.stack([
            np.concatenate([personas[pid].beta.beta, personas[pid].embedding.vec])
            for pid in ids
        ])
        mean = raw.mean(axis=0)
        std = np.maximum(raw.std(axis=0), 1e-8)
        by_pid: dict[str, list[TrainingWindow]] = {pid: [] for pid in ids}
        for w, pid in windows:
            by_pid[pid].append(w)
        skels = {
            pid: skeleton_from_shape(personas[pid].beta, template, blend_matrix)
            for pid in ids
        }
        feats = {
            pid: np.stack([_clip_match_feature(w, skels[pid]) for w in ws])
            for pid, ws in by_pid.items()
        }
        return MotionMatchDatabase(
            persona_ids=ids,
            persona_vecs=(raw - mean) / std,
            persona_mean=mean,
            persona_std=std,
            windows_by_persona=by_pid,
            clip_feats_by_persona=feats,
            skeletons=skels,
        )


def _clip_match_feature(window: TrainingWindow, skeleton: Skeleton) -> np.ndarray:
    """Last-past-frame joint positions and velocities, flattened."""
    roots, rots = decode_features(window.past[-2:], skeleton.num_joints)
    p0 = forward_kinematics(Pose(roots[0].copy(), rots[0].copy()), skeleton)
    p1 = forward_kinematics(Pose(roots[1].copy(), rots[1].copy()), skeleton)
    return np.concatenate([p1.reshape(-1), (p1 - p0).reshape(-1)])


def motion_match_baseline(
    database: MotionMatchDatabase,
    beta: np.ndarray,
    text_embedding: np.ndarray,
    past: np.ndarray,
) -> tuple[str, TrainingWindow]:
    """Hierarchical match: nearest persona by (shape, text), then nearest
    window by last-past-frame joint positions/velocities; returns its future."""
    if not database.persona_ids:
        raise EmptyDatabase("empty motion-matching database")
    q = (np.concatenate([beta, text_embedding]) - database.persona_mean) / database.persona_std
    pi = int(np.argmin(np.linalg.norm(database.persona_vecs - q, axis=1)))
    pid = database.persona_ids[pi]
    skel = database.skeletons[pid]
    qf = _clip_match_feature(
        TrainingWindow(
            past=past, future=np.zeros((FUTURE_LEN, past.shape[1])),
            traj_pos=np.zeros((FUTURE_LEN, 2)), traj_facing=np.tile([0.0, 1.0], (FUTURE_LEN, 1)),
            beta=ShapeVector(beta.copy()), text_key=pid,
        ),
        skel,
    )
    wi = int(np.argmin(np.linalg.norm(database.clip_feats_by_persona[pid] - qf, axis=1)))
    return pid, database.windows_by_persona[pid][wi]


# ---------------------------------------------------------------------------
# Full evaluation protocol

def run_eval(
    model,
    dataset,
    script: ControlScript,
    seed: int,
    cfg,
    classifier: MotionClassifier | None = None,
    skip_warmup_blocks: int = 2,
    window_stride: int = 15,
    log=print,
) -> "EvalReport":
    """Drive the controller with the prerecorded script for every persona,
    collect the motion, and compute the whole battery. Deterministic given
    the seed. The first blocks after the rest-pose warm start are excluded
    from the statistics."""
    from .motion_data import extract_windows
    from .runtime import InputState, generate_scripted_clip, open_loop_target

    if classifier is None:
        classifier = train_classifier(
            [(w, w.text_key) for w in dataset.windows], dataset.stats, seed=seed, log=log
        )
    script_inputs = [InputState.from_script_frame(f) for f in script.frames]
    target_pos, target_face = open_loop_target(script_inputs, cfg.runtime)
    skip = skip_warmup_blocks * FUTURE_LEN

    ref_by_pid: dict[str, np.ndarray] = {}
    for w in dataset.windows:
        ref_by_pid.setdefault(w.text_key, []).append(pose_features(w.future))
    ref_by_pid = {pid: np.concatenate(rows) for pid, rows in ref_by_pid.items()}

    report = EvalReport()
    for i, pid in enumerate(sorted(dataset.personas)):
        persona = dataset.personas[pid]
        clip = generate_scripted_clip(model, persona, script_inputs, cfg, seed + 1000 * i)
        skel = skeleton_from_shape(persona.beta, dataset.template, dataset.blend_matrix)
        gen_windows = extract_windows(
            clip, window_stride, beta=persona.beta, text_key=pid, clip_id=f"gen-{pid}"
        )
        gen_windows = [w for w in gen_windows if w.start >= skip]
        gen_feats = np.concatenate([pose_features(w.future) for w in gen_windows])

        from .motion_data import ground_facing

        n = clip.num_frames
        gen_xz = clip.root_positions[skip:n, [0, 2]]
        gen_face = np.stack([ground_facing(clip.rotations[t, 0]) for t in range(skip, n)])
        te = traj_errors(gen_xz, gen_face, target_pos[skip:n], target_face[skip:n])

        scores = cca_and_r3(classifier, [(w, pid) for w in gen_windows])
        report.per_persona[pid] = PersonaMetrics(
            fpd=fpd(gen_feats, ref_by_pid[pid]),
            div=diversity(gen_feats, rng=np.random.default_rng(seed + i)),
            tpe_cm=te["tpe_cm"],
            tde_deg=te["tde_deg"],
            fsd_cm_per_s=fsd(clip, skel),
            cca=scores["cca"],
            r_at_3=scores["r_at_3"],
        )
        log(f"evaluated {pid}: fpd={report.per_persona[pid].fpd:.3f} "
            f"cca={scores['cca']:.2f} fsd={report.per_persona[pid].fsd_cm_per_s:.2f}")
    return report


# ---------------------------------------------------------------------------
# EvalReport

@dataclass
class PersonaMetrics:
    fpd: float
    div: float
    tpe_cm: float
    tde_deg: float
    fsd_cm_per_s: float
    cca: float
    r_at_3: float


@dataclass
class EvalReport:
    per_persona: dict[str, PersonaMetrics] = field(default_factory=dict)

    def aggregate(self) -> PersonaMetrics:
        rows = list(self.per_persona.values())
        if not rows:
            raise InsufficientData("empty report")
        mean = lambda k: float(np.mean([getattr(r, k) for r in rows]))
        return PersonaMetrics(**{k: mean(k) for k in PersonaMetrics.__dataclass_fields__})

    def to_json(self) -> str:
        doc = {pid: asdict(m) for pid, m in sorted(self.per_persona.items())}
        doc["aggregate"] = asdict(self.aggregate())
        return json.dumps(doc, indent=1, sort_keys=True)

    def to_markdown(self) -> str:
        cols = ["fpd", "div", "tpe_cm", "tde_deg", "fsd_cm_per_s", "cca", "r_at_3"]
        lines = ["| persona | " + " | ".join(cols) + " |",
                 "|" + "---|" * (len(cols) + 1)]
        for pid, m in sorted(self.per_persona.items()) + [("mean", self.aggregate())]:
            vals = " | ".join(f"{getattr(m, c):.3f}" for c in cols)
            lines.append(f"| {pid} | {vals} |")
        return "\n".join(lines)
