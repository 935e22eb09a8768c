"""Exact cosine k-NN over motion embeddings, with a binary snapshot format.

The store is an immutable snapshot: vectors are renormalized once on ingest
and queries rank by dot product against the normalized query. Ties are broken
by ascending motion_id so evaluation runs are reproducible. Readers never
observe partial state; replacing an index means building a new snapshot.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

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

INDEX_MAGIC = b"MIDX"


@dataclass(frozen=True, eq=False)
class RankedList:
    """Query result: (motion_id, score) pairs with non-increasing scores."""

    query_id: str
    items: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple((str(m), float(s)) for m, s in self.items))
        scores = [s for _, s in self.items]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("scores must be non-increasing")
        ids = [m for m, _ in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate motion_ids in ranked list")

    def ids(self) -> list[str]:
        return [m for m, _ in self.items]

    def __len__(self) -> int:
        return len(self.items)


class EmbeddingStore:
    """Immutable collection of unit-norm embedding vectors keyed by motion_id."""

    def __init__(self, ids: Sequence[str], matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float32)
        if matrix.ndim != 2:
            raise ValueError("matrix must be n x d")
        if len(ids) != matrix.shape[0]:
            raise ValueError("ids and matrix row count disagree")
        if len(set(ids)) != len(ids):
            dupes = sorted({m for m in ids if list(ids).count(m) > 1})
            raise ValueError(f"duplicate motion_id(s): {dupes}")
        if matrix.size:
            norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
            bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-6)
            if bad.size:
                raise ValueError(
                    f"vectors must be unit norm +- 1e-6; offending ids: "
                    f"{[ids[i] for i in bad[:5]]}"
                )
        self._ids = list(ids)
        self._matrix = matrix
        self._matrix.setflags(write=False)
        self._matrix64 = matrix.astype(np.float64)  # query-time cache
        self._id_array = np.asarray(self._ids)

    @classmethod
    def build(cls, entries: Sequence[tuple[str, np.ndarray]]) -> "EmbeddingStore":
        """Normalize and ingest (motion_id, vector) pairs; order-independent for queries."""
        ids: list[str] = []
        rows: list[np.ndarray] = []
        seen: set[str] = set()
        dim: int | None = None
        for motion_id, vector in entries:
            if motion_id in seen:
                raise ValueError(f"duplicate motion_id {motion_id!r}")
            seen.add(motion_id)
            vec = np.asarray(vector, dtype=np.float64).reshape(-1)
            if dim is None:
                dim = vec.shape[0]
            elif vec.shape[0] != dim:
                raise ValueError(
                    f"dimension mismatch for {motion_id!r}: expected {dim}, got {vec.shape[0]}"
                )
            norm = np.linalg.norm(vec)
            if norm == 0.0 or not np.isfinite(norm):
                raise ValueError(f"vector for {motion_id!r} is zero or non-finite")
            ids.append(motion_id)
            rows.append((vec / norm).astype(np.float32))
        matrix = np.stack(rows) if rows else np.zeros((0, 0), dtype=np.float32)
        return cls(ids, matrix)

    @property
    def dimension(self) -> int:
        return self._matrix.shape[1]

    def __len__(self) -> int:
        return self._matrix.shape[0]

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def vector(self, motion_id: str) -> np.ndarray:
        try:
            row = self._ids.index(motion_id)
        except ValueError:
            raise KeyError(motion_id) from None
        return self._matrix[row].copy()


def knn_query(store: EmbeddingStore, query: np.ndarray, k: int, query_id: str = "") -> RankedList:
    """Exact top-k by cosine similarity, ties broken by ascending motion_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(store) == 0:
        return RankedList(query_id=query_id, items=())
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != store.dimension:
        raise ValueError(f"query dimension {q.shape[0]} does not match index dimension {store.dimension}")
    norm = np.linalg.norm(q)
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("query vector is zero or non-finite")
    scores = np.clip(store._matrix64 @ (q / norm), -1.0, 1.0)
    order = np.lexsort((store._id_array, -scores))
    top = order[: min(k, len(store))]
    return RankedList(
        query_id=query_id,
        items=tuple((store._ids[i], float(scores[i])) for i in top),
    )


def save_index(store: EmbeddingStore, path: str | Path) -> None:
    """Snapshot format: magic, u32 d, u32 n, then per entry (id, d f32 values)."""
    with open(path, "wb") as f:
        f.write(INDEX_MAGIC)
        write_u32(f, store.dimension)
        write_u32(f, len(store))
        for i, motion_id in enumerate(store._ids):
            write_string(f, motion_id)
            write_f32_array(f, store._matrix[i])


def load_index(path: str | Path) -> EmbeddingStore:
    with open(path, "rb") as f:
        expect_magic(f, INDEX_MAGIC)
        dim = read_u32(f, "dimension")
        count = read_u32(f, "entry count")
        ids: list[str] = []
        rows: list[np.ndarray] = []
        for _ in range(count):
            ids.append(read_string(f, "motion_id"))
            rows.append(read_f32_array(f, dim, "embedding payload"))
        expect_eof(f)
    matrix = np.stack(rows) if rows else np.zeros((0, dim), dtype=np.float32)
    try:
        return EmbeddingStore(ids, matrix)
    except ValueError as exc:
        raise FormatError(f"invalid index payload: {exc}") from exc
