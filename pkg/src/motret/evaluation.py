"""Retrieval evaluation: exact-search metrics, relevance-based nDCG, protocol.

Exact-search metrics treat the paired motion(s) of a query as the only
correct answers: recall@k is the percentage of queries whose best-ranked
ground-truth motion lands in the top k, and mean/median rank summarize that
rank over all queries. The relevance-based nDCG uses graded per-item
relevance: DCG_p = sum_{i<=p} (2^rel_i - 1) / log2(i + 1), normalized by the
ideal ordering's DCG.

Relevance can be ingested from externally computed matrices or derived from
the built-in lexical proxy (term-frequency cosine between caption texts).
"""
from __future__ import annotations

import json
import math
import statistics
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import CaptionRecord, DatasetManifest
from .index import EmbeddingStore, RankedList, knn_query
from .io_utils import (
    FormatError,
    expect_eof,
    expect_magic,
    read_f32_array,
    read_u32,
    write_f32_array,
    write_u32,
)
from .text import normalize_text, tokenize

RELEVANCE_MAGIC = b"RELV"
RELEVANCE_PROVENANCES = ("external-spice", "external-spacy", "lexical")


def dedupe_queries(captions: Sequence[CaptionRecord]) -> list[CaptionRecord]:
    """Keep the first caption per normalized text, preserving order."""
    seen: set[str] = set()
    kept: list[CaptionRecord] = []
    for cap in captions:
        key = normalize_text(cap.text)
        if key not in seen:
            seen.add(key)
            kept.append(cap)
    return kept


def rank_of_relevant(ranking: RankedList, ground_truth: set[str]) -> int:
    """1-based rank of the best-ranked ground-truth motion."""
    if not ground_truth:
        raise ValueError("ground-truth set is empty")
    for position, motion_id in enumerate(ranking.ids(), start=1):
        if motion_id in ground_truth:
            return position
    raise ValueError(
        f"no ground-truth motion of {sorted(ground_truth)} appears in the ranking "
        f"for query {ranking.query_id!r}"
    )


def recall_at_k(ranks: Sequence[int], k: int) -> float:
    """Percentage of queries with rank <= k."""
    if not ranks:
        raise ValueError("ranks must be non-empty")
    if k < 1:
        raise ValueError("k must be >= 1")
    return 100.0 * sum(1 for r in ranks if r <= k) / len(ranks)


def mean_median_rank(ranks: Sequence[int]) -> tuple[float, float]:
    if not ranks:
        raise ValueError("ranks must be non-empty")
    return float(statistics.fmean(ranks)), float(statistics.median(ranks))


def dcg(rels: Sequence[float], p: int) -> float:
    if p < 1:
        raise ValueError("p must be >= 1")
    total = 0.0
    for i, rel in enumerate(rels[:p], start=1):
        total += (2.0**rel - 1.0) / math.log2(i + 1)
    return total


def ndcg(ranked_rels: Sequence[float], p: int | None = None) -> float:
    """DCG of the list over DCG of its ideal (non-increasing) ordering.

    Degenerate all-zero lists score 0 by definition.
    """
    rels = [float(r) for r in ranked_rels]
    if any(r < 0 for r in rels):
        raise ValueError("relevance values must be >= 0")
    if any(not math.isfinite(r) for r in rels):
        raise ValueError("relevance values must be finite")
    cutoff = len(rels) if p is None else p
    ideal = dcg(sorted(rels, reverse=True), cutoff)
    if ideal == 0.0:
        return 0.0
    return dcg(rels, cutoff) / ideal


def lexical_relevance(a: str, b: str) -> float:
    """Cosine similarity of term-frequency vectors over tokenized text."""
    ta = Counter(tokenize(a))
    tb = Counter(tokenize(b))
    dot = sum(ta[tok] * tb[tok] for tok in ta.keys() & tb.keys())
    na = math.sqrt(sum(c * c for c in ta.values()))
    nb = math.sqrt(sum(c * c for c in tb.values()))
    return dot / (na * nb)


@dataclass(frozen=True, eq=False)
class RelevanceMatrix:
    """Query x item relevance; rows align with the deduped query list."""

    values: np.ndarray  # n_queries x n_items, >= 0
    row_ids: tuple[str, ...]  # caption_ids
    col_ids: tuple[str, ...]  # motion_ids
    provenance: str

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise ValueError("values must be 2-D")
        if values.shape != (len(self.row_ids), len(self.col_ids)):
            raise ValueError(
                f"values shape {values.shape} disagrees with ids "
                f"({len(self.row_ids)} x {len(self.col_ids)})"
            )
        if values.size and not np.isfinite(values).all():
            raise ValueError("relevance values must be finite")
        if values.size and (values < 0).any():
            raise ValueError("relevance values must be >= 0")
        if self.provenance not in RELEVANCE_PROVENANCES:
            raise ValueError(
                f"provenance must be one of {RELEVANCE_PROVENANCES}, got {self.provenance!r}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_ids", tuple(self.row_ids))
        object.__setattr__(self, "col_ids", tuple(self.col_ids))
        object.__setattr__(self, "_row_index", {cid: i for i, cid in enumerate(self.row_ids)})
        object.__setattr__(self, "_col_index", {mid: j for j, mid in enumerate(self.col_ids)})

    def relevance(self, caption_id: str, motion_id: str) -> float:
        return float(self.values[self._row_index[caption_id], self._col_index[motion_id]])

    def row_for(self, caption_id: str) -> np.ndarray:
        return self.values[self._row_index[caption_id]]


def build_lexical_relevance(
    queries: Sequence[CaptionRecord],
    motion_captions: Mapping[str, Sequence[str]],
) -> RelevanceMatrix:
    """Proxy relevance: max TF-cosine between the query and each motion's captions."""
    col_ids = tuple(motion_captions.keys())
    values = np.zeros((len(queries), len(col_ids)), dtype=np.float32)
    for i, query in enumerate(queries):
        for j, motion_id in enumerate(col_ids):
            texts = motion_captions[motion_id]
            if not texts:
                raise ValueError(f"motion {motion_id!r} has no captions")
            values[i, j] = max(lexical_relevance(query.text, text) for text in texts)
    return RelevanceMatrix(
        values=values,
        row_ids=tuple(q.caption_id for q in queries),
        col_ids=col_ids,
        provenance="lexical",
    )


def _sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".json")


def save_relevance(matrix: RelevanceMatrix, path: str | Path) -> None:
    """Binary matrix plus a JSON sidecar mapping rows/cols to ids."""
    with open(path, "wb") as f:
        f.write(RELEVANCE_MAGIC)
        write_u32(f, matrix.values.shape[0])
        write_u32(f, matrix.values.shape[1])
        write_f32_array(f, matrix.values)
    sidecar = {
        "rows": list(matrix.row_ids),
        "cols": list(matrix.col_ids),
        "provenance": matrix.provenance,
    }
    _sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_relevance(path: str | Path) -> RelevanceMatrix:
    with open(path, "rb") as f:
        expect_magic(f, RELEVANCE_MAGIC)
        n_queries = read_u32(f, "query count")
        n_items = read_u32(f, "item count")
        payload = read_f32_array(f, n_queries * n_items, "relevance payload")
        expect_eof(f)
    sidecar_path = _sidecar_path(path)
    if not sidecar_path.exists():
        raise FormatError(f"missing relevance sidecar {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    try:
        return RelevanceMatrix(
            values=payload.reshape(n_queries, n_items),
            row_ids=tuple(sidecar["rows"]),
            col_ids=tuple(sidecar["cols"]),
            provenance=sidecar["provenance"],
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"invalid relevance file: {exc}") from exc


@dataclass
class MetricsReport:
    """One evaluation run: Table-style recall/rank columns plus nDCG per source."""

    recall: dict[int, float]
    mean_rank: float
    median_rank: float
    ndcg: dict[str, dict[str, float]]
    n_queries: int
    zero_relevance_queries: dict[str, int]

    def __post_init__(self) -> None:
        ks = sorted(self.recall)
        for a, b in zip(ks, ks[1:]):
            if self.recall[a] > self.recall[b] + 1e-9:
                raise ValueError(f"recall@{a} > recall@{b}")
        if self.mean_rank < 1 or self.median_rank < 1:
            raise ValueError("ranks are 1-based and must be >= 1")
        for source, by_cutoff in self.ndcg.items():
            for cutoff, value in by_cutoff.items():
                if not -1e-9 <= value <= 1.0 + 1e-9:
                    raise ValueError(f"nDCG[{source}][{cutoff}] = {value} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "recall": {str(k): v for k, v in sorted(self.recall.items())},
            "mean_rank": self.mean_rank,
            "median_rank": self.median_rank,
            "ndcg": self.ndcg,
            "n_queries": self.n_queries,
            "zero_relevance_queries": self.zero_relevance_queries,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping) -> "MetricsReport":
        return cls(
            recall={int(k): float(v) for k, v in data["recall"].items()},
            mean_rank=float(data["mean_rank"]),
            median_rank=float(data["median_rank"]),
            ndcg={s: dict(v) for s, v in data["ndcg"].items()},
            n_queries=int(data["n_queries"]),
            zero_relevance_queries=dict(data["zero_relevance_queries"]),
        )

    def format_table(self) -> str:
        """Aligned columns in the usual order: recall@k, then ranks, then nDCG."""
        headers = [f"r{k}" for k in sorted(self.recall)] + ["mean", "med"]
        values = [f"{self.recall[k]:.1f}" for k in sorted(self.recall)]
        values += [f"{self.mean_rank:.1f}", f"{self.median_rank:.1f}"]
        for source in sorted(self.ndcg):
            for cutoff in sorted(self.ndcg[source]):
                headers.append(f"nDCG[{source}]@{cutoff}")
                values.append(f"{self.ndcg[source][cutoff]:.3f}")
        widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
        head = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
        body = "  ".join(v.rjust(w) for v, w in zip(values, widths))
        return f"{head}\n{body}"


def evaluate_protocol(
    query_embeddings: Sequence[tuple[str, np.ndarray]],
    store: EmbeddingStore,
    ground_truth: Mapping[str, set[str]],
    relevances: Sequence[RelevanceMatrix] = (),
    ks: Sequence[int] = (1, 5, 10),
    ndcg_cutoff: int = 10,
) -> MetricsReport:
    """Rank the full collection for every query and compute all metrics.

    `query_embeddings` must already be deduplicated; every query needs a
    ground-truth entry and every relevance matrix must cover all queries.
    nDCG is reported at `ndcg_cutoff` and over the full list.
    """
    if not query_embeddings:
        raise ValueError("no queries to evaluate")
    if len(store) == 0:
        raise ValueError("store is empty")
    missing = [cid for cid, _ in query_embeddings if cid not in ground_truth or not ground_truth[cid]]
    if missing:
        raise ValueError(f"queries with missing ground truth: {missing}")

    ranks: list[int] = []
    # per-query values aggregated with fsum so query order cannot perturb a bit
    ndcg_values: dict[str, dict[str, list[float]]] = {
        rel.provenance: {f"p{ndcg_cutoff}": [], "full": []} for rel in relevances
    }
    zero_relevance: dict[str, int] = {rel.provenance: 0 for rel in relevances}

    for caption_id, vector in query_embeddings:
        ranking = knn_query(store, vector, k=len(store), query_id=caption_id)
        ranks.append(rank_of_relevant(ranking, ground_truth[caption_id]))
        for rel in relevances:
            ranked_rels = [rel.relevance(caption_id, motion_id) for motion_id in ranking.ids()]
            if all(r == 0.0 for r in ranked_rels):
                zero_relevance[rel.provenance] += 1
            ndcg_values[rel.provenance][f"p{ndcg_cutoff}"].append(ndcg(ranked_rels, ndcg_cutoff))
            ndcg_values[rel.provenance]["full"].append(ndcg(ranked_rels, None))

    n = len(ranks)
    mean_rank, median_rank = mean_median_rank(ranks)
    return MetricsReport(
        recall={k: recall_at_k(ranks, k) for k in ks},
        mean_rank=mean_rank,
        median_rank=median_rank,
        ndcg={
            src: {c: math.fsum(values) / n for c, values in by_cutoff.items()}
            for src, by_cutoff in ndcg_values.items()
        },
        n_queries=n,
        zero_relevance_queries=zero_relevance,
    )


def ground_truth_from_manifest(manifest: DatasetManifest, split: str | None = None) -> dict[str, set[str]]:
    """caption_id -> {paired motion_id} for the chosen split."""
    return {
        cap.caption_id: {entry.motion_id}
        for entry in manifest.split_entries(split)
        for cap in entry.captions
    }
