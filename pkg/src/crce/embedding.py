"""Text-embedding geometry: pooled encoding, cosine/Euclidean distance
reports between a target and its coref/retain candidates, and the ball
sampler used by the sphere training variant.

Analysis embeddings are unit-normalized pooled sentence vectors, so every
report row can be checked against the identity d = sqrt(2*(1 - cos)).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import threading
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .dataset import ConceptRecord

NORM_ATOL = 1e-6
IDENTITY_ATOL = 1e-4


class EncoderError(RuntimeError):
    pass


class TokenLimitError(EncoderError):
    """Input exceeds the encoder's token window. Raised instead of silently
    truncating, so over-long prompts surface during dataset curation."""

    def __init__(self, text: str, n_tokens: int, limit: int):
        self.text = text
        self.n_tokens = n_tokens
        self.limit = limit
        super().__init__(
            f"text of {n_tokens} tokens exceeds the encoder limit of {limit}: {text[:60]!r}"
        )


@dataclass
class EmbeddingVector:
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("embedding values must be a 1-D vector")
        if self.normalized:
            norm = float(np.linalg.norm(self.values))
            if abs(norm - 1.0) >= NORM_ATOL:
                raise ValueError(f"normalized flag set but |v| = {norm}")

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def _as_array(v) -> np.ndarray:
    if isinstance(v, EmbeddingVector):
        return v.values
    return np.asarray(v, dtype=np.float64)


def cosine_similarity(u, v) -> float:
    """u.v / (|u||v|). Symmetric, in [-1, 1]."""
    a, b = _as_array(u), _as_array(v)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    norm_a, norm_b = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("cosine similarity undefined for zero vectors")
    return float(np.dot(a, b) / (norm_a * norm_b))


def euclidean_distance(u, v) -> float:
    a, b = _as_array(u), _as_array(v)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def unit_identity_gap(cosine: float, euclidean: float) -> float:
    """|d - sqrt(2*(1-cos))|; zero for exact unit vectors."""
    return abs(euclidean - math.sqrt(max(0.0, 2.0 * (1.0 - cosine))))


class TextEncoder(Protocol):
    encoder_id: str

    def encode_pooled(self, text: str) -> EmbeddingVector:
        """Unit-normalized pooled sentence embedding (analysis space)."""
        ...

    def encode_sequence(self, text: str) -> np.ndarray:
        """Per-token embedding sequence, shape (tokens, dim), used as
        conditioning by diffusion backends."""
        ...


@dataclass
class DistanceRow:
    group: str  # "coref" | "retain"
    text: str
    certainty: str
    cosine: float
    euclidean: float
    identity_ok: bool


@dataclass
class DistanceReport:
    target: str
    rows: list[DistanceRow]
    encoder_id: str = ""
    pooling: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["group", "text", "certainty", "cosine", "euclidean", "identity_ok"])
        for row in self.rows:
            writer.writerow(
                [
                    row.group,
                    row.text,
                    row.certainty,
                    f"{row.cosine:.6f}",
                    f"{row.euclidean:.6f}",
                    str(row.identity_ok).lower(),
                ]
            )
        return buf.getvalue()


def distance_report(target: str, record: ConceptRecord, encoder: TextEncoder) -> DistanceReport:
    """One row per coref/retain entry (train and test pooled together),
    sorted by group then descending cosine to the target."""
    target_vec = encoder.encode_pooled(target)
    rows: list[DistanceRow] = []
    for group, entries in (("coref", record.corefs()), ("retain", record.retains())):
        for entry in entries:
            vec = encoder.encode_pooled(entry.text)
            cos = cosine_similarity(target_vec, vec)
            dist = euclidean_distance(target_vec, vec)
            rows.append(
                DistanceRow(
                    group=group,
                    text=entry.text,
                    certainty=entry.certainty,
                    cosine=cos,
                    euclidean=dist,
                    identity_ok=unit_identity_gap(cos, dist) < IDENTITY_ATOL,
                )
            )
    rows.sort(key=lambda r: (r.group, -r.cosine))
    return DistanceReport(
        target=target,
        rows=rows,
        encoder_id=getattr(encoder, "encoder_id", ""),
        pooling=getattr(encoder, "pooling", ""),
    )


def sphere_sample(center, radius: float, rng: np.random.Generator) -> np.ndarray:
    """center + delta with delta uniform in the L2 ball of the center's
    dimension. The result is intentionally NOT renormalized: it is consumed
    directly as a conditioning embedding."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    c = _as_array(center)
    direction = rng.standard_normal(c.shape[0])
    norm = float(np.linalg.norm(direction))
    while norm == 0.0:  # vanishing probability; guards the division
        direction = rng.standard_normal(c.shape[0])
        norm = float(np.linalg.norm(direction))
    magnitude = radius * rng.uniform() ** (1.0 / c.shape[0])
    return c + direction * (magnitude / norm)


# --- Encoders --------------------------------------------------------------


class HashEncoder:
    """Deterministic stand-in encoder for offline tests: each text maps to a
    fixed pseudo-random unit vector seeded by its content hash."""

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.encoder_id = f"hash-{dim}-{seed}"
        self.pooling = "hash"

    def _vector(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def encode_pooled(self, text: str) -> EmbeddingVector:
        if not text or not text.strip():
            raise EncoderError("cannot encode empty text")
        return EmbeddingVector(self._vector(text), normalized=True)

    def encode_sequence(self, text: str) -> np.ndarray:
        return self._vector(text)[None, :]


class ClipTextEncoder:
    """Adapter over a CLIP-style text model (the encoder used by SD v1.4 is
    openai/clip-vit-large-patch14).

    Pooling choices for the analysis embedding:
      - "eos": the pooled end-of-sequence hidden state (default)
      - "mean": mean of the final token states
      - "projected": the contrastive-space text embedding (text projection
        applied to the EOS state)
    All pooled outputs are unit-normalized. Conditioning sequences are the
    raw final hidden states, as consumed by the diffusion U-Net.
    """

    DEFAULT_MODEL = "openai/clip-vit-large-patch14"

    def __init__(self, model_id: str = DEFAULT_MODEL, device: str = "cpu", pooling: str = "eos"):
        if pooling not in ("eos", "mean", "projected"):
            raise ValueError(f"unknown pooling {pooling!r}")
        try:
            import torch
            from transformers import CLIPTextModelWithProjection, CLIPTokenizer
        except ImportError as exc:
            raise EncoderError(
                "transformers is required for the CLIP encoder; install the 'clip' extra"
            ) from exc
        try:
            self.tokenizer = CLIPTokenizer.from_pretrained(model_id)
            self.model = CLIPTextModelWithProjection.from_pretrained(model_id)
        except Exception as exc:
            raise EncoderError(f"could not load text encoder {model_id!r}: {exc}") from exc
        self.model.eval().to(device)
        self._torch = torch
        self.device = device
        self.pooling = pooling
        self.encoder_id = f"{model_id}@{pooling}"
        # Model state is not reentrant; serialize access.
        self._lock = threading.Lock()

    def _forward(self, text: str):
        if not text or not text.strip():
            raise EncoderError("cannot encode empty text")
        torch = self._torch
        ids_unbounded = self.tokenizer(text, return_tensors="pt").input_ids
        limit = self.tokenizer.model_max_length
        if ids_unbounded.shape[1] > limit:
            raise TokenLimitError(text, int(ids_unbounded.shape[1]), int(limit))
        inputs = self.tokenizer(
            text, padding="max_length", max_length=limit, return_tensors="pt"
        ).to(self.device)
        with self._lock, torch.no_grad():
            return self.model(**inputs, output_hidden_states=False), inputs

    def encode_pooled(self, text: str) -> EmbeddingVector:
        outputs, inputs = self._forward(text)
        if self.pooling == "projected":
            pooled = outputs.text_embeds[0]
        else:
            hidden = outputs.last_hidden_state[0]
            if self.pooling == "eos":
                eos_index = int(inputs.input_ids[0].argmax())  # highest id is EOS
                pooled = hidden[eos_index]
            else:
                mask = inputs.attention_mask[0].bool()
                pooled = hidden[mask].mean(dim=0)
        vec = pooled.cpu().numpy().astype(np.float64)
        vec /= np.linalg.norm(vec)
        return EmbeddingVector(vec, normalized=True)

    def encode_sequence(self, text: str) -> np.ndarray:
        outputs, _ = self._forward(text)
        return outputs.last_hidden_state[0].cpu().numpy().astype(np.float64)


def load_clip_encoder(
    model_id: str = ClipTextEncoder.DEFAULT_MODEL, device: str = "cpu", pooling: str = "eos"
) -> ClipTextEncoder:
    """Construct the CLIP adapter; EncoderError when weights are missing."""
    return ClipTextEncoder(model_id=model_id, device=device, pooling=pooling)


# --- Cache ------------------------------------------------------------------


@dataclass
class EmbeddingCache:
    """Pooled-embedding cache keyed by (encoder id, text), persisted as JSON
    next to the dataset so sweeps do not re-encode."""

    path: str | None = None
    entries: dict[str, dict[str, list[float]]] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str) -> "EmbeddingCache":
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as handle:
                return cls(path=path, entries=json.load(handle))
        return cls(path=path)

    def save(self) -> None:
        if self.path is None:
            return
        tmp = self.path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as handle:
            json.dump(self.entries, handle)
        os.replace(tmp, self.path)

    def get_or_encode(self, encoder: TextEncoder, text: str) -> EmbeddingVector:
        bucket = self.entries.setdefault(encoder.encoder_id, {})
        if text in bucket:
            return EmbeddingVector(np.array(bucket[text]), normalized=True)
        vec = encoder.encode_pooled(text)
        bucket[text] = [float(x) for x in vec.values]
        return vec
