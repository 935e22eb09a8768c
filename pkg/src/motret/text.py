"""Text side of the pipeline.

Two paths mirror what is actually trainable downstream of frozen language
backbones: an LSTM aggregator over precomputed contextual token embeddings,
and an affine projection over precomputed sentence embeddings. A third,
self-contained path (trainable embedding table + GRU) exists so the whole
pipeline can run offline with no upstream model at all; `HashedTextEmbedder`
plays the role of the frozen backbone for fixtures and free-text queries.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .io_utils import (
    FormatError,
    expect_eof,
    expect_magic,
    read_f32_array,
    read_string,
    read_u32,
    write_f32_array,
    write_string,
    write_u32,
)
from .recurrent import GruStack, LstmStack

TOKEN_MAGIC = b"TOKE"
SENTENCE_MAGIC = b"SENT"

_TOKEN_RE = re.compile(r"[a-z0-9]+")

TEXT_VARIANTS = ("lstm-aggregator", "affine", "self-contained")


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace. Deterministic."""
    tokens = _TOKEN_RE.findall(text.lower())
    if not tokens:
        raise ValueError("empty caption")
    return tokens


def normalize_text(text: str) -> str:
    return " ".join(tokenize(text))


@dataclass(frozen=True, eq=False)
class TokenEmbeddingSequence:
    caption_id: str
    vectors: np.ndarray  # L x d_tok

    def __post_init__(self) -> None:
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] < 1:
            raise ValueError("vectors must be L x d_tok with L >= 1")
        if not np.isfinite(vectors).all():
            raise ValueError("token embeddings contain non-finite values")
        object.__setattr__(self, "vectors", vectors)


@dataclass(frozen=True, eq=False)
class SentenceEmbedding:
    caption_id: str
    vector: np.ndarray  # d_sent

    def __post_init__(self) -> None:
        vector = np.asarray(self.vector, dtype=np.float64)
        if vector.ndim != 1:
            raise ValueError("vector must be 1-D")
        if not np.isfinite(vector).all():
            raise ValueError("sentence embedding contains non-finite values")
        object.__setattr__(self, "vector", vector)


def write_token_embeddings(records: Sequence[TokenEmbeddingSequence], path: str | Path) -> None:
    """Container: magic, u32 count, then per record (id, u32 L, u32 d_tok, payload)."""
    dims = {r.vectors.shape[1] for r in records}
    if len(dims) > 1:
        raise ValueError(f"inconsistent d_tok across records: {sorted(dims)}")
    with open(path, "wb") as f:
        f.write(TOKEN_MAGIC)
        write_u32(f, len(records))
        for rec in records:
            write_string(f, rec.caption_id)
            write_u32(f, rec.vectors.shape[0])
            write_u32(f, rec.vectors.shape[1])
            write_f32_array(f, rec.vectors)


def read_token_embeddings(path: str | Path) -> dict[str, TokenEmbeddingSequence]:
    with open(path, "rb") as f:
        expect_magic(f, TOKEN_MAGIC)
        count = read_u32(f, "record count")
        records: dict[str, TokenEmbeddingSequence] = {}
        d_tok: int | None = None
        for _ in range(count):
            caption_id = read_string(f, "caption_id")
            if caption_id in records:
                raise FormatError(f"duplicate caption_id {caption_id!r}")
            length = read_u32(f, "L")
            dim = read_u32(f, "d_tok")
            if length < 1:
                raise FormatError("L must be >= 1")
            if d_tok is None:
                d_tok = dim
            elif dim != d_tok:
                raise FormatError(f"d_tok changed from {d_tok} to {dim} mid-file")
            payload = read_f32_array(f, length * dim, "token payload")
            records[caption_id] = TokenEmbeddingSequence(
                caption_id=caption_id, vectors=payload.astype(np.float64).reshape(length, dim)
            )
        expect_eof(f)
    return records


def write_sentence_embeddings(records: Sequence[SentenceEmbedding], path: str | Path) -> None:
    """Container: magic, u32 count, u32 d_sent, then per record (id, d_sent f32)."""
    if records:
        d_sent = records[0].vector.shape[0]
    else:
        d_sent = 0
    for rec in records:
        if rec.vector.shape[0] != d_sent:
            raise ValueError("inconsistent d_sent across records")
    with open(path, "wb") as f:
        f.write(SENTENCE_MAGIC)
        write_u32(f, len(records))
        write_u32(f, d_sent)
        for rec in records:
            write_string(f, rec.caption_id)
            write_f32_array(f, rec.vector)


def read_sentence_embeddings(path: str | Path) -> dict[str, SentenceEmbedding]:
    with open(path, "rb") as f:
        expect_magic(f, SENTENCE_MAGIC)
        count = read_u32(f, "record count")
        d_sent = read_u32(f, "d_sent")
        records: dict[str, SentenceEmbedding] = {}
        for _ in range(count):
            caption_id = read_string(f, "caption_id")
            if caption_id in records:
                raise FormatError(f"duplicate caption_id {caption_id!r}")
            payload = read_f32_array(f, d_sent, "sentence payload")
            records[caption_id] = SentenceEmbedding(
                caption_id=caption_id, vector=payload.astype(np.float64)
            )
        expect_eof(f)
    return records


class HashedTextEmbedder:
    """Deterministic bag-of-tokens embedder standing in for a frozen backbone.

    Each token maps to a fixed unit vector derived from a seeded hash of its
    surface form; the sentence vector is the L2-normalized mean. Stable
    across processes and runs, so embeddings regenerated at query time match
    the ones used in training.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            key = int.from_bytes(digest[:8], "little")
            rng = np.random.default_rng((self.seed, key))
            vec = rng.standard_normal(self.dim)
            vec /= np.linalg.norm(vec)
            self._cache[token] = vec
        return vec

    def token_sequence(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        return np.stack([self.token_vector(tok) for tok in tokens])

    def sentence_vector(self, text: str) -> np.ndarray:
        """Order-sensitive sentence vector: mean over position-keyed token vectors.

        Keying on (position, token) keeps distinct token sequences linearly
        independent in general position, as with a real sentence encoder;
        a plain bag of words would collapse reordered sentences.
        """
        tokens = tokenize(text)
        mean = np.mean([self.token_vector(f"{i}:{tok}") for i, tok in enumerate(tokens)], axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0.0:
            return mean  # hash collisions canceling out; keep the zero vector
        return mean / norm

    def config(self) -> dict:
        return {"kind": "hashed", "dim": self.dim, "seed": self.seed}


class Vocabulary:
    """Token-to-index mapping with a reserved out-of-vocabulary slot at 0."""

    OOV = "<unk>"

    def __init__(self, tokens: Sequence[str]):
        self._index = {self.OOV: 0}
        for tok in tokens:
            if tok not in self._index:
                self._index[tok] = len(self._index)
        self._tokens = sorted(self._index, key=self._index.get)

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        seen: dict[str, None] = {}
        for text in texts:
            for tok in tokenize(text):
                seen.setdefault(tok)
        return cls(list(seen))

    def __len__(self) -> int:
        return len(self._index)

    def index(self, token: str) -> int:
        return self._index.get(token, 0)

    def ids(self, text: str) -> list[int]:
        return [self.index(tok) for tok in tokenize(text)]

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)


class AffineTextEncoder(nn.Module):
    """Affine projection over a precomputed sentence embedding: W x + b."""

    variant = "affine"

    def __init__(self, d_sent: int, d_text: int):
        super().__init__()
        self.d_sent = d_sent
        self.d_text = d_text
        self.proj = nn.Linear(d_sent, d_text, dtype=torch.float64)

    def forward(self, sentences: torch.Tensor) -> torch.Tensor:
        if sentences.shape[-1] != self.d_sent:
            raise ValueError(f"expected sentence dim {self.d_sent}, got {sentences.shape[-1]}")
        return self.proj(sentences)

    def config(self) -> dict:
        return {"d_sent": self.d_sent, "d_text": self.d_text}


class LstmAggregatorTextEncoder(nn.Module):
    """Two-layer LSTM over precomputed token embeddings; final top-layer state."""

    variant = "lstm-aggregator"

    def __init__(self, d_tok: int, hidden: int = 512, layers: int = 2):
        super().__init__()
        self.d_tok = d_tok
        self.hidden = hidden
        self.layers = layers
        self.lstm = LstmStack(d_tok, hidden, layers)

    @property
    def d_text(self) -> int:
        return self.hidden

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self.lstm(tokens, mask)

    def config(self) -> dict:
        return {"d_tok": self.d_tok, "hidden": self.hidden, "layers": self.layers}


class SelfContainedTextEncoder(nn.Module):
    """Trainable embedding table + GRU aggregator; no upstream model needed."""

    variant = "self-contained"

    def __init__(self, vocab_size: int, d_emb: int = 64, hidden: int = 128, layers: int = 1):
        super().__init__()
        self.vocab_size = vocab_size
        self.d_emb = d_emb
        self.hidden = hidden
        self.layers = layers
        self.embedding = nn.Parameter(torch.randn(vocab_size, d_emb, dtype=torch.float64) * 0.1)
        self.gru = GruStack(d_emb, hidden, layers)

    @property
    def d_text(self) -> int:
        return self.hidden

    def forward(self, token_ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        embedded = self.embedding[token_ids]
        return self.gru(embedded, mask)

    def config(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_emb": self.d_emb,
            "hidden": self.hidden,
            "layers": self.layers,
        }


def pad_token_sequences(
    sequences: Sequence[np.ndarray],
) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad L_i x d arrays to B x L_max x d plus a boolean mask."""
    if len(sequences) == 0:
        raise ValueError("cannot batch an empty sequence list")
    dims = {s.shape[1] for s in sequences}
    if len(dims) != 1:
        raise ValueError(f"inconsistent token dims: {sorted(dims)}")
    l_max = max(s.shape[0] for s in sequences)
    out = torch.zeros((len(sequences), l_max, dims.pop()), dtype=torch.float64)
    mask = torch.zeros((len(sequences), l_max), dtype=torch.bool)
    for i, seq in enumerate(sequences):
        out[i, : seq.shape[0]] = torch.from_numpy(np.asarray(seq, dtype=np.float64))
        mask[i, : seq.shape[0]] = True
    return out, mask


def pad_token_ids(id_lists: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad variable-length id lists to B x L_max (pad id 0 = OOV) plus a mask."""
    if len(id_lists) == 0:
        raise ValueError("cannot batch an empty sequence list")
    l_max = max(len(ids) for ids in id_lists)
    out = torch.zeros((len(id_lists), l_max), dtype=torch.long)
    mask = torch.zeros((len(id_lists), l_max), dtype=torch.bool)
    for i, ids in enumerate(id_lists):
        out[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        mask[i, : len(ids)] = True
    return out, mask
