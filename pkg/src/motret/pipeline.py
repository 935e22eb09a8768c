"""End-to-end drivers: dataset loading, training runs, bulk encoding, sweeps.

This is the layer the CLI and service sit on. It owns the glue decisions:
how caption text becomes encoder input for each text variant, how motions are
aggregated/batched for encoding, and how a trained model plus an index turn
into a metrics report.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import torch

from .checkpoints import TextCheckpoint
from .common_space import (
    RetrievalModel,
    TextBatch,
    TrainConfig,
    Trainer,
    build_text_encoder,
)
from .data import (
    CaptionRecord,
    DatasetManifest,
    PaddedBatch,
    SkeletonSequence,
    SkeletonTopology,
    aggregate_body_parts,
    load_manifest,
    load_motion,
    pad_and_mask,
)
from .encoders import build_motion_encoder
from .evaluation import (
    MetricsReport,
    RelevanceMatrix,
    build_lexical_relevance,
    dedupe_queries,
    evaluate_protocol,
    ground_truth_from_manifest,
)
from .index import EmbeddingStore
from .text import (
    HashedTextEmbedder,
    Vocabulary,
    pad_token_ids,
    pad_token_sequences,
    read_sentence_embeddings,
    read_token_embeddings,
)


@dataclass(eq=False)
class LoadedDataset:
    manifest: DatasetManifest
    base_dir: Path
    motions: dict[str, SkeletonSequence]

    @property
    def topology(self) -> SkeletonTopology:
        return self.manifest.resolve_topology()


def load_dataset(manifest_path: str | Path) -> LoadedDataset:
    """Load a manifest and every motion it references."""
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    base_dir = manifest_path.parent
    topology = manifest.resolve_topology()
    motions = {
        entry.motion_id: load_motion(base_dir / entry.path, topology)
        for entry in manifest.entries
    }
    return LoadedDataset(manifest=manifest, base_dir=base_dir, motions=motions)


class TextInputBuilder:
    """Turns raw caption text (or precomputed embeddings) into TextBatch inputs."""

    def __init__(
        self,
        variant: str,
        upstream: Mapping | None = None,
        vocab: Vocabulary | None = None,
        base_dir: Path | None = None,
    ):
        self.variant = variant
        self.upstream = dict(upstream or {"kind": "hashed", "dim": 64, "seed": 0})
        self.vocab = vocab
        self._embedder: HashedTextEmbedder | None = None
        self._sentences: dict | None = None
        self._tokens: dict | None = None
        kind = self.upstream.get("kind", "hashed")
        if variant == "self-contained":
            if vocab is None:
                raise ValueError("self-contained text input needs a vocabulary")
        elif kind == "hashed":
            self._embedder = HashedTextEmbedder(
                dim=int(self.upstream.get("dim", 64)), seed=int(self.upstream.get("seed", 0))
            )
        elif kind == "files":
            root = base_dir or Path(".")
            if variant == "affine":
                path = self.upstream.get("sentence_file")
                if not path:
                    raise ValueError("upstream kind 'files' needs a 'sentence_file' for the affine variant")
                self._sentences = read_sentence_embeddings(root / path)
            else:
                path = self.upstream.get("token_file")
                if not path:
                    raise ValueError(
                        "upstream kind 'files' needs a 'token_file' for the lstm-aggregator variant"
                    )
                self._tokens = read_token_embeddings(root / path)
        else:
            raise ValueError(f"unknown upstream kind {kind!r}")

    @classmethod
    def from_train_config(
        cls,
        config: TrainConfig,
        train_captions: Sequence[CaptionRecord],
        base_dir: Path | None = None,
    ) -> "TextInputBuilder":
        vocab = None
        if config.text_variant == "self-contained":
            vocab = Vocabulary.build(cap.text for cap in train_captions)
        return cls(config.text_variant, upstream=config.upstream, vocab=vocab, base_dir=base_dir)

    @property
    def input_dim(self) -> int:
        """Feature dimension the text encoder must accept."""
        if self.variant == "self-contained":
            return len(self.vocab)
        if self._embedder is not None:
            return self._embedder.dim
        if self._sentences is not None:
            first = next(iter(self._sentences.values()))
            return first.vector.shape[0]
        first = next(iter(self._tokens.values()))
        return first.vectors.shape[1]

    def supports_free_text(self) -> bool:
        return self.variant == "self-contained" or self._embedder is not None

    def batch(self, captions: Sequence[CaptionRecord]) -> TextBatch:
        if self.variant == "self-contained":
            ids, mask = pad_token_ids([self.vocab.ids(cap.text) for cap in captions])
            return TextBatch(tokens=ids, mask=mask)
        if self.variant == "affine":
            if self._embedder is not None:
                rows = [self._embedder.sentence_vector(cap.text) for cap in captions]
            else:
                rows = [self._lookup_sentence(cap.caption_id).vector for cap in captions]
            return TextBatch(sentences=torch.from_numpy(np.stack(rows)))
        if self._embedder is not None:
            seqs = [self._embedder.token_sequence(cap.text) for cap in captions]
        else:
            seqs = [self._lookup_tokens(cap.caption_id).vectors for cap in captions]
        tokens, mask = pad_token_sequences(seqs)
        return TextBatch(tokens=tokens, mask=mask)

    def batch_for_texts(self, texts: Sequence[str]) -> TextBatch:
        """Free-text inputs (queries); needs the hashed upstream or a vocabulary."""
        if not self.supports_free_text():
            raise ValueError(
                "this checkpoint consumes precomputed embedding files; "
                "free-text queries need the hashed upstream or the self-contained variant"
            )
        records = [CaptionRecord(caption_id=f"q{i}", motion_id="", text=t) for i, t in enumerate(texts)]
        return self.batch(records)

    def _lookup_sentence(self, caption_id: str):
        rec = self._sentences.get(caption_id)
        if rec is None:
            raise KeyError(f"caption {caption_id!r} not found in sentence-embedding file")
        return rec

    def _lookup_tokens(self, caption_id: str):
        rec = self._tokens.get(caption_id)
        if rec is None:
            raise KeyError(f"caption {caption_id!r} not found in token-embedding file")
        return rec

    @classmethod
    def from_text_checkpoint(cls, ckpt: TextCheckpoint, base_dir: Path | None = None) -> "TextInputBuilder":
        return cls(ckpt.variant, upstream=ckpt.upstream, vocab=ckpt.vocab, base_dir=base_dir)


def _text_encoder_kwargs(config: TrainConfig, builder: TextInputBuilder) -> dict:
    kwargs = dict(config.text_kwargs)
    if config.text_variant == "affine":
        kwargs.setdefault("d_sent", builder.input_dim)
        kwargs.setdefault("d_text", config.d_common)
    elif config.text_variant == "lstm-aggregator":
        kwargs.setdefault("d_tok", builder.input_dim)
    else:
        kwargs.setdefault("vocab_size", builder.input_dim)
    return kwargs


def build_model(config: TrainConfig, builder: TextInputBuilder) -> RetrievalModel:
    """Deterministically (per seed) construct the full two-stream model."""
    torch.manual_seed(config.seed)
    motion_kwargs = dict(config.motion_kwargs)
    if config.motion_variant == "mot":
        motion_kwargs.setdefault("max_len", config.max_len)
    motion_encoder = build_motion_encoder(config.motion_variant, **motion_kwargs)
    text_encoder = build_text_encoder(config.text_variant, **_text_encoder_kwargs(config, builder))
    return RetrievalModel(
        motion_encoder=motion_encoder,
        text_encoder=text_encoder,
        d_common=config.d_common,
        normalize=config.normalize,
        tau_init=config.tau_init,
    )


@dataclass(eq=False)
class TrainResult:
    model: RetrievalModel
    trainer: Trainer
    builder: TextInputBuilder
    config: TrainConfig
    history: list[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def initial_loss(self) -> float:
        return self.history[0]

    @property
    def final_loss(self) -> float:
        return self.history[-1]


def _aggregated(dataset: LoadedDataset) -> dict[str, np.ndarray]:
    topology = dataset.topology
    return {
        motion_id: aggregate_body_parts(seq, topology)
        for motion_id, seq in dataset.motions.items()
    }


def train_on_dataset(
    config: TrainConfig,
    dataset: LoadedDataset,
    max_steps: int | None = None,
) -> TrainResult:
    """Train on the manifest's train split; deterministic given the config seed."""
    entries = dataset.manifest.split_entries("train")
    pairs = [(cap, entry.motion_id) for entry in entries for cap in entry.captions]
    if not pairs:
        raise ValueError("train split has no caption-motion pairs")
    builder = TextInputBuilder.from_train_config(
        config, [cap for cap, _ in pairs], base_dir=dataset.base_dir
    )
    model = build_model(config, builder)
    trainer = Trainer(model, loss=config.loss, lr=config.lr, margin=config.margin)
    aggregated = _aggregated(dataset)

    min_batch = 2 if config.loss == "triplet" else 1
    rng = np.random.default_rng(config.seed)
    history: list[float] = []
    started = time.monotonic()
    done = False
    for _ in range(config.epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(pairs), config.batch_size):
            chunk = order[start : start + config.batch_size]
            if len(chunk) < min_batch:
                continue
            batch_pairs = [pairs[i] for i in chunk]
            motion_batch = pad_and_mask(
                [aggregated[motion_id] for _, motion_id in batch_pairs], config.max_len
            )
            text_batch = builder.batch([cap for cap, _ in batch_pairs])
            history.append(trainer.train_step(motion_batch, text_batch))
            if max_steps is not None and trainer.step_count >= max_steps:
                done = True
                break
        if done:
            break
    return TrainResult(
        model=model,
        trainer=trainer,
        builder=builder,
        config=config,
        history=history,
        seconds=time.monotonic() - started,
    )


def encode_motion_set(
    encoder: torch.nn.Module,
    projection: torch.nn.Module,
    dataset: LoadedDataset,
    split: str | None = None,
    max_len: int = 200,
    batch_size: int = 64,
) -> list[tuple[str, np.ndarray]]:
    aggregated = _aggregated(dataset)
    entries = dataset.manifest.split_entries(split)
    out: list[tuple[str, np.ndarray]] = []
    with torch.no_grad():
        for start in range(0, len(entries), batch_size):
            chunk = entries[start : start + batch_size]
            batch = pad_and_mask([aggregated[e.motion_id] for e in chunk], max_len)
            embeddings = projection(encoder(batch)).numpy()
            out.extend((e.motion_id, embeddings[i].copy()) for i, e in enumerate(chunk))
    return out


def encode_caption_set(
    encoder: torch.nn.Module,
    projection: torch.nn.Module,
    builder: TextInputBuilder,
    captions: Sequence[CaptionRecord],
    batch_size: int = 64,
) -> list[tuple[str, np.ndarray]]:
    out: list[tuple[str, np.ndarray]] = []
    with torch.no_grad():
        for start in range(0, len(captions), batch_size):
            chunk = list(captions[start : start + batch_size])
            text_batch = builder.batch(chunk)
            if encoder.variant == "affine":
                features = encoder(text_batch.sentences)
            else:
                features = encoder(text_batch.tokens, text_batch.mask)
            embeddings = projection(features).numpy()
            out.extend((cap.caption_id, embeddings[i].copy()) for i, cap in enumerate(chunk))
    return out


def embed_query_text(ckpt: TextCheckpoint, text: str, base_dir: Path | None = None) -> np.ndarray:
    """Embed one free-text query with a loaded text checkpoint."""
    builder = TextInputBuilder.from_text_checkpoint(ckpt, base_dir=base_dir)
    batch = builder.batch_for_texts([text])
    with torch.no_grad():
        if ckpt.variant == "affine":
            features = ckpt.encoder(batch.sentences)
        else:
            features = ckpt.encoder(batch.tokens, batch.mask)
        return ckpt.projection(features).numpy()[0].copy()


def evaluate_components(
    motion_encoder: torch.nn.Module,
    motion_proj: torch.nn.Module,
    text_encoder: torch.nn.Module,
    text_proj: torch.nn.Module,
    builder: TextInputBuilder,
    dataset: LoadedDataset,
    split: str | None = "test",
    max_len: int = 200,
    relevances: Sequence[RelevanceMatrix] | None = None,
    with_lexical: bool = True,
    ks: Sequence[int] = (1, 5, 10),
) -> MetricsReport:
    """Encode, index, dedupe, and score one split end to end."""
    entries = dataset.manifest.split_entries(split)
    if not entries:
        raise ValueError(f"split {split!r} has no motions")
    motion_embeddings = encode_motion_set(
        motion_encoder, motion_proj, dataset, split=split, max_len=max_len
    )
    store = EmbeddingStore.build(motion_embeddings)
    queries = dedupe_queries(dataset.manifest.captions_for(split))
    query_embeddings = encode_caption_set(text_encoder, text_proj, builder, queries)
    ground_truth = ground_truth_from_manifest(dataset.manifest, split)

    rels = list(relevances or [])
    if with_lexical:
        motion_captions = {e.motion_id: [c.text for c in e.captions] for e in entries}
        rels.append(build_lexical_relevance(queries, motion_captions))
    return evaluate_protocol(query_embeddings, store, ground_truth, rels, ks=ks)


def evaluate_dataset(
    model: RetrievalModel,
    builder: TextInputBuilder,
    dataset: LoadedDataset,
    split: str | None = "test",
    max_len: int = 200,
    relevances: Sequence[RelevanceMatrix] | None = None,
    with_lexical: bool = True,
    ks: Sequence[int] = (1, 5, 10),
) -> MetricsReport:
    return evaluate_components(
        model.motion_encoder,
        model.motion_proj,
        model.text_encoder,
        model.text_proj,
        builder,
        dataset,
        split=split,
        max_len=max_len,
        relevances=relevances,
        with_lexical=with_lexical,
        ks=ks,
    )


def retrieval_recall_at_1(
    model: RetrievalModel,
    builder: TextInputBuilder,
    dataset: LoadedDataset,
    split: str = "train",
    max_len: int = 200,
) -> float:
    """Convenience: recall@1 on a split (used by overfit checks and sweeps)."""
    report = evaluate_dataset(
        model, builder, dataset, split=split, max_len=max_len, with_lexical=False, ks=(1,)
    )
    return report.recall[1]


# --- Sweep runner -------------------------------------------------------------


@dataclass
class SweepCell:
    params: dict
    report: MetricsReport
    final_loss: float


@dataclass
class SweepResult:
    cells: list[SweepCell]

    def to_dict(self) -> dict:
        return {
            "cells": [
                {"params": c.params, "final_loss": c.final_loss, "report": c.report.to_dict()}
                for c in self.cells
            ]
        }

    def format_table(self) -> str:
        """Plot-ready TSV: one row per cell, metrics flattened into columns."""
        if not self.cells:
            return ""
        param_keys = sorted(self.cells[0].params)
        header = param_keys + ["final_loss", "r1", "r5", "r10", "mean_rank", "median_rank"]
        ndcg_keys = []
        first = self.cells[0].report
        for source in sorted(first.ndcg):
            for cutoff in sorted(first.ndcg[source]):
                ndcg_keys.append((source, cutoff))
                header.append(f"ndcg_{source}_{cutoff}")
        lines = ["\t".join(header)]
        for cell in self.cells:
            row = [str(cell.params[k]) for k in param_keys]
            row.append(f"{cell.final_loss:.6f}")
            row += [f"{cell.report.recall.get(k, float('nan')):.3f}" for k in (1, 5, 10)]
            row += [f"{cell.report.mean_rank:.3f}", f"{cell.report.median_rank:.3f}"]
            row += [f"{cell.report.ndcg[s][c]:.5f}" for s, c in ndcg_keys]
            lines.append("\t".join(row))
        return "\n".join(lines)


def run_sweep(
    base_config: TrainConfig,
    dataset: LoadedDataset,
    grid: Mapping[str, Sequence] | None = None,
    split: str = "train",
    max_steps: int | None = None,
) -> SweepResult:
    """Train and evaluate one model per grid cell (d_common x loss x encoder)."""
    grid = dict(grid or {"d_common": [8, 16, 64, 256]})
    for key in grid:
        if key not in ("d_common", "loss", "motion_variant", "text_variant"):
            raise ValueError(f"unsupported sweep axis {key!r}")
    axes = sorted(grid)
    cells: list[SweepCell] = []

    def expand(prefix: dict, remaining: list[str]) -> Iterable[dict]:
        if not remaining:
            yield dict(prefix)
            return
        key = remaining[0]
        for value in grid[key]:
            yield from expand({**prefix, key: value}, remaining[1:])

    for params in expand({}, axes):
        config = TrainConfig(
            **{
                **{k: v for k, v in vars(base_config).items()},
                **params,
            }
        )
        result = train_on_dataset(config, dataset, max_steps=max_steps)
        report = evaluate_dataset(
            result.model, result.builder, dataset, split=split, max_len=config.max_len
        )
        cells.append(SweepCell(params=params, report=report, final_loss=result.final_loss))
    return SweepResult(cells=cells)
