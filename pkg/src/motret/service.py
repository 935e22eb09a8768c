"""HTTP query service: free-text search over a built index, motion playback.

Endpoints:
  POST /query           {"text": str, "k": int} -> ranked {motion_id, score, rank}
  GET  /motions/{id}    fps + per-frame 3D joint positions for playback
  GET  /health          {"status": "ok", "index_size": n}

The service never mutates the index; all state is loaded once at startup and
shared read-only across requests, so concurrent identical queries return
identical results.
"""
from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .checkpoints import TextCheckpoint, load_motion_checkpoint, load_text_checkpoint
from .data import DatasetManifest, SkeletonSequence, load_manifest, load_motion
from .index import EmbeddingStore, knn_query, load_index
from .pipeline import TextInputBuilder

CONFIG_ENV_VAR = "MOTRET_CONFIG"


@dataclass
class ServiceConfig:
    """Startup configuration; every referenced file must exist."""

    index_path: str
    text_checkpoint: str
    manifest: str | None = None  # enables GET /motions/{id}
    motion_checkpoint: str | None = None  # validated for compatibility when given
    host: str = "127.0.0.1"
    port: int = 8000
    default_k: int = 5
    max_query_length: int = 512
    frontend_dir: str | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "ServiceConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**data)

    @classmethod
    def from_env(cls) -> "ServiceConfig":
        path = os.environ.get(CONFIG_ENV_VAR)
        if not path:
            raise ValueError(f"set {CONFIG_ENV_VAR} or pass a config path")
        return cls.from_file(path)


class QueryRequest(BaseModel):
    text: str
    k: int | None = Field(default=None, description="number of results; service default if omitted")


class QueryResult(BaseModel):
    motion_id: str
    score: float
    rank: int


class QueryResponse(BaseModel):
    results: list[QueryResult]


class HealthResponse(BaseModel):
    status: str
    index_size: int


class MotionResponse(BaseModel):
    motion_id: str
    fps: float
    joints: list[list[list[float]]]  # T x J x 3


@dataclass(eq=False)
class ServiceState:
    config: ServiceConfig
    store: EmbeddingStore
    text_ckpt: TextCheckpoint
    builder: TextInputBuilder
    manifest: DatasetManifest | None
    base_dir: Path | None
    _motion_cache: dict[str, SkeletonSequence] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def embed_query(self, text: str) -> np.ndarray:
        batch = self.builder.batch_for_texts([text])
        with torch.no_grad():
            if self.text_ckpt.variant == "affine":
                features = self.text_ckpt.encoder(batch.sentences)
            else:
                features = self.text_ckpt.encoder(batch.tokens, batch.mask)
            return self.text_ckpt.projection(features).numpy()[0]

    def motion(self, motion_id: str) -> SkeletonSequence | None:
        if self.manifest is None:
            return None
        with self._lock:
            cached = self._motion_cache.get(motion_id)
            if cached is not None:
                return cached
        entry = self._entries_by_id().get(motion_id)
        if entry is None:
            return None
        seq = load_motion(self.base_dir / entry.path, self.manifest.resolve_topology())
        with self._lock:
            self._motion_cache[motion_id] = seq
        return seq

    def _entries_by_id(self):
        entries = getattr(self, "_entry_index", None)
        if entries is None:
            entries = {e.motion_id: e for e in self.manifest.entries}
            self._entry_index = entries
        return entries


def load_service_state(config: ServiceConfig) -> ServiceState:
    for label, path in (
        ("index_path", config.index_path),
        ("text_checkpoint", config.text_checkpoint),
        ("manifest", config.manifest),
        ("motion_checkpoint", config.motion_checkpoint),
    ):
        if path is not None and not Path(path).exists():
            raise FileNotFoundError(f"{label} does not exist: {path}")

    store = load_index(config.index_path)
    text_ckpt = load_text_checkpoint(config.text_checkpoint)
    if len(store) and text_ckpt.projection.d_common != store.dimension:
        raise ValueError(
            f"text checkpoint projects to {text_ckpt.projection.d_common} dims "
            f"but the index holds {store.dimension}-dim vectors"
        )
    if config.motion_checkpoint:
        _, motion_proj = load_motion_checkpoint(config.motion_checkpoint)
        if len(store) and motion_proj.d_common != store.dimension:
            raise ValueError(
                f"motion checkpoint projects to {motion_proj.d_common} dims "
                f"but the index holds {store.dimension}-dim vectors"
            )
    builder = TextInputBuilder.from_text_checkpoint(
        text_ckpt, base_dir=Path(config.text_checkpoint).parent
    )
    if not builder.supports_free_text():
        raise ValueError(
            "text checkpoint consumes precomputed embedding files and cannot "
            "serve free-text queries; train with the hashed upstream or the "
            "self-contained variant"
        )
    manifest = None
    base_dir = None
    if config.manifest:
        manifest = load_manifest(config.manifest)
        base_dir = Path(config.manifest).parent
    return ServiceState(
        config=config,
        store=store,
        text_ckpt=text_ckpt,
        builder=builder,
        manifest=manifest,
        base_dir=base_dir,
    )


def create_app(config: ServiceConfig) -> FastAPI:
    state = load_service_state(config)
    app = FastAPI(title="motret query service")
    app.state.retrieval = state

    @app.post("/query", response_model=QueryResponse)
    def query(request: QueryRequest) -> QueryResponse:
        text = request.text.strip()
        if not text:
            raise HTTPException(status_code=400, detail="text must be non-empty")
        if len(request.text) > config.max_query_length:
            raise HTTPException(
                status_code=400,
                detail=f"text exceeds the maximum query length of {config.max_query_length}",
            )
        k = config.default_k if request.k is None else request.k
        if k < 1:
            raise HTTPException(status_code=400, detail="k must be >= 1")
        try:
            vector = state.embed_query(text)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        ranking = knn_query(state.store, vector, k=k)
        return QueryResponse(
            results=[
                QueryResult(motion_id=motion_id, score=score, rank=rank)
                for rank, (motion_id, score) in enumerate(ranking.items, start=1)
            ]
        )

    @app.get("/motions/{motion_id}", response_model=MotionResponse)
    def motion(motion_id: str) -> MotionResponse:
        seq = state.motion(motion_id)
        if seq is None:
            raise HTTPException(status_code=404, detail=f"unknown motion {motion_id!r}")
        return MotionResponse(
            motion_id=motion_id,
            fps=seq.fps,
            joints=seq.joint_positions().tolist(),
        )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", index_size=len(state.store))

    if config.frontend_dir and Path(config.frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=config.frontend_dir, html=True), name="frontend")

    return app


def serve(config: ServiceConfig) -> None:
    """Run the service until interrupted."""
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port)
