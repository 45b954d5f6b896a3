"""Text embedding providers, rare identifier allocation, condition assembly.

The default provider hashes lowercased word n-grams (unigrams, bigrams and
character trigrams) into 512 signed buckets and L2-normalizes; it is pure
and byte-stable across platforms. A precomputed provider serves vectors
exported offline from a real encoder; persona files record which provider
produced their stored embedding.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    EmptyText,
    ParseError,
    PoolExhausted,
    ProviderFailure,
)
from .kinematics import ShapeVector
from .motion_data import FUTURE_LEN, PAST_LEN, NormStats, TrainingWindow

EMBED_DIM = 512

DEFAULT_P_DROP_PAST = 0.15
DEFAULT_P_DROP_TEXT = 0.0  # optional extension; 0.1 when enabled

_WORD_RE = re.compile(r"\w+", re.UNICODE)


@dataclass(frozen=True)
class TextEmbedding:
    vec: np.ndarray  # (512,), unit L2 norm

    def __post_init__(self):
        if self.vec.shape != (EMBED_DIM,):
            raise ValueError(f"embedding must have {EMBED_DIM} dims")
        n = np.linalg.norm(self.vec)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"embedding norm {n} != 1")
        self.vec.setflags(write=False)


@dataclass(frozen=True)
class PersonaSpec:
    persona_id: str
    beta: ShapeVector
    text: str
    embedding: TextEmbedding
    identifier_token: str | None = None


class HashingTextProvider:
    """Deterministic feature-hashing encoder; no learned weights."""

    name = "hashing"

    def embed_text(self, text: str) -> TextEmbedding:
        words = _WORD_RE.findall(text.lower())
        if not words:
            raise EmptyText("no word tokens in text")
        feats: list[str] = [f"u:{w}" for w in words]
        feats += [f"b:{a} {b}" for a, b in zip(words, words[1:])]
        for w in words:
            padded = f"^{w}$"
            feats += [f"c:{padded[i:i+3]}" for i in range(len(padded) - 2)]
        vec = np.zeros(EMBED_DIM)
        for f in feats:
            h = int.from_bytes(hashlib.blake2b(f.encode("utf-8"), digest_size=8).digest(), "little")
            idx = h % EMBED_DIM
            sign = 1.0 if (h >> 32) & 1 else -1.0
            vec[idx] += sign
        n = np.linalg.norm(vec)
        if n == 0.0:
            raise ProviderFailure("all hash features cancelled")
        return TextEmbedding(vec / n)


class PrecomputedTextProvider:
    """Serves embeddings exported offline, keyed by exact text."""

    name = "precomputed"

    def __init__(self, table: dict[str, np.ndarray]):
        self._table = {t: np.asarray(v, dtype=np.float64) for t, v in table.items()}

    def embed_text(self, text: str) -> TextEmbedding:
        if not text:
            raise EmptyText("empty text")
        if text not in self._table:
            raise ProviderFailure(f"no precomputed embedding for {text!r}")
        return TextEmbedding(self._table[text].copy())


def embed_text(provider, text: str) -> TextEmbedding:
    if not text or not text.strip():
        raise EmptyText("empty text")
    return provider.embed_text(text)


def get_provider(name: str | None = None, table: dict | None = None):
    """Provider by name; env var PL_TEXT_PROVIDER overrides when name is None."""
    name = name or os.environ.get("PL_TEXT_PROVIDER", "hashing")
    if name == "hashing":
        return HashingTextProvider()
    if name == "precomputed":
        return PrecomputedTextProvider(table or {})
    raise ProviderFailure(f"unknown text provider {name!r}")


# ---------------------------------------------------------------------------
# Rare identifier tokens: stand-in vocabulary ids 500..1000 rendered as
# 3-character strings over a 26-glyph rare alphabet. Ordinary prompts never
# contain these glyphs, so hashed embeddings cannot collide with real words.

_RARE_ALPHABET = "ĀĂĄĆĈĊČĎĐĒĔĖĘĚĜĞĠĢĤĦĨĪĬĮİĲ"
_POOL_RANGE = (500, 1000)  # inclusive


def _render_token(vocab_id: int) -> str:
    a = _RARE_ALPHABET
    return a[(vocab_id // 676) % 26] + a[(vocab_id // 26) % 26] + a[vocab_id % 26]


def identifier_pool() -> list[str]:
    lo, hi = _POOL_RANGE
    return [_render_token(v) for v in range(lo, hi + 1)]


def allocate_identifier(rng: np.random.Generator, used: set[str]) -> str:
    free = [t for t in identifier_pool() if t not in used]
    if not free:
        raise PoolExhausted("all rare identifier tokens are in use")
    return free[int(rng.integers(0, len(free)))]


# ---------------------------------------------------------------------------

CONDITION_CLAMP = 10.0


def clamp_condition(x: np.ndarray) -> np.ndarray:
    """Bound normalized condition features.

    A no-op on in-distribution data (z-scores stay within a few units); it
    keeps pathological inputs (a rest-pose warm start, degenerate generated
    frames) from flooding the attention with huge tokens.
    """
    return np.clip(x, -CONDITION_CLAMP, CONDITION_CLAMP)


@dataclass(frozen=True)
class ConditionBundle:
    """Everything the denoiser consumes besides (x_t, t)."""

    past: np.ndarray         # (PAST_LEN, F) normalized features
    traj_pos: np.ndarray     # (FUTURE_LEN, 2)
    traj_facing: np.ndarray  # (FUTURE_LEN, 2)
    beta: np.ndarray         # (10,)
    text: np.ndarray         # (512,)
    drop_past: bool = False
    drop_text: bool = False

    def __post_init__(self):
        if self.past.shape[0] != PAST_LEN:
            raise ValueError(f"past must have {PAST_LEN} frames")
        if self.traj_pos.shape != (FUTURE_LEN, 2) or self.traj_facing.shape != (FUTURE_LEN, 2):
            raise ValueError("trajectory must cover the future block")
        if self.beta.shape != (10,) or self.text.shape != (EMBED_DIM,):
            raise ValueError("bad beta/text shapes")

    @property
    def cp_end(self) -> np.ndarray:
        """Last past frame (normalized): the blending anchor."""
        return self.past[-1]


def assemble_bundle(
    window: TrainingWindow,
    persona: PersonaSpec,
    stats: NormStats,
    rng: np.random.Generator | None = None,
    p_drop_past: float = DEFAULT_P_DROP_PAST,
    p_drop_text: float = DEFAULT_P_DROP_TEXT,
    training: bool = True,
    text_embedding: TextEmbedding | None = None,
) -> ConditionBundle:
    """Normalize past features and roll dropout flags.

    At inference (training=False) both flags are forced off; the CFG branch
    requests its unconditional pass explicitly instead. `text_embedding`
    overrides the persona's stored embedding (paraphrase sampling).
    """
    drop_past = False
    drop_text = False
    if training:
        if rng is None:
            raise ValueError("training-mode assembly needs an rng")
        drop_past = bool(rng.random() < p_drop_past)
        drop_text = bool(rng.random() < p_drop_text)
    emb = text_embedding if text_embedding is not None else persona.embedding
    return ConditionBundle(
        past=clamp_condition(stats.normalize(window.past)),
        traj_pos=window.traj_pos.copy(),
        traj_facing=window.traj_facing.copy(),
        beta=window.beta.beta.copy(),
        text=emb.vec.copy(),
        drop_past=drop_past,
        drop_text=drop_text,
    )


# ---------------------------------------------------------------------------
# persona.json I/O

def save_persona(path: str | Path, persona: PersonaSpec, provider_name: str = "hashing") -> None:
    doc = {
        "persona_id": persona.persona_id,
        "beta": persona.beta.beta.tolist(),
        "text": persona.text,
        "embedding_provider": provider_name,
        "embedding": persona.embedding.vec.tolist(),
        "identifier_token": persona.identifier_token,
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_persona(path: str | Path, provider=None) -> PersonaSpec:
    """Load a persona file, checking embedding/text consistency.

    A stored embedding that disagrees with the active hashing provider is an
    error unless the file records provider "precomputed".
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e}") from e
    try:
        beta = ShapeVector(np.asarray(doc["beta"], dtype=np.float64))
        text = doc["text"]
        stored_provider = doc.get("embedding_provider", "hashing")
        raw = doc.get("embedding")
    except (KeyError, ValueError) as e:
        raise ParseError(f"{path}: {e}") from e

    if raw is not None:
        emb = TextEmbedding(np.asarray(raw, dtype=np.float64))
        if stored_provider != "precomputed":
            check = (provider or get_provider(stored_provider)).embed_text(text)
            if not np.allclose(check.vec, emb.vec, atol=1e-9):
                raise ParseError(
                    f"{path}: stored embedding disagrees with provider {stored_provider!r}"
                )
    else:
        emb = (provider or get_provider()).embed_text(text)
    return PersonaSpec(
        persona_id=doc["persona_id"],
        beta=beta,
        text=text,
        embedding=emb,
        identifier_token=doc.get("identifier_token"),
    )
