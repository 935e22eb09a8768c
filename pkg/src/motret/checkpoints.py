"""Checkpoint containers for encoder and projection weights.

Both sides share one layout: magic, u32 JSON-config length, canonical JSON
config, u32 tensor count, then per tensor (u16 name length, name, u8 ndim,
u32 dims, little-endian f32 payload). The motion side uses magic ``MENC``,
the text/projection side ``TENC``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import torch
from torch import nn

from .common_space import ProjectionHead, build_text_encoder
from .encoders import build_motion_encoder
from .io_utils import (
    FormatError,
    expect_eof,
    expect_magic,
    read_exact,
    read_f32_array,
    read_string,
    read_u32,
    write_f32_array,
    write_string,
    write_u32,
)
from .text import Vocabulary

MOTION_CHECKPOINT_MAGIC = b"MENC"
TEXT_CHECKPOINT_MAGIC = b"TENC"


def write_tensor_container(
    path: str | Path, magic: bytes, config: dict, tensors: Mapping[str, np.ndarray]
) -> None:
    config_bytes = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        write_u32(f, len(config_bytes))
        f.write(config_bytes)
        write_u32(f, len(tensors))
        for name, tensor in tensors.items():
            arr = np.asarray(tensor)
            write_string(f, name)
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                write_u32(f, dim)
            write_f32_array(f, arr)


def read_tensor_container(path: str | Path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        expect_magic(f, magic)
        config_len = read_u32(f, "config length")
        try:
            config = json.loads(read_exact(f, config_len, "config JSON").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"config header is not valid JSON: {exc}") from exc
        n_tensors = read_u32(f, "tensor count")
        tensors: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            name = read_string(f, "tensor name")
            if name in tensors:
                raise FormatError(f"duplicate tensor name {name!r}")
            ndim = struct.unpack("<B", read_exact(f, 1, "tensor ndim"))[0]
            shape = tuple(read_u32(f, "tensor dim") for _ in range(ndim))
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            tensors[name] = read_f32_array(f, count, f"tensor {name!r} payload").reshape(shape)
        expect_eof(f)
    return config, tensors


def _state_dict_f32(module: nn.Module, prefix: str) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.{name}": value.detach().cpu().numpy().astype("<f4")
        for name, value in module.state_dict().items()
    }


def _load_state_f64(module: nn.Module, tensors: Mapping[str, np.ndarray], prefix: str) -> None:
    state = {}
    wanted = {f"{prefix}.{name}": name for name in module.state_dict()}
    missing = set(wanted) - set(tensors)
    if missing:
        raise FormatError(f"checkpoint is missing tensors: {sorted(missing)}")
    for full_name, short_name in wanted.items():
        state[short_name] = torch.from_numpy(tensors[full_name].astype(np.float64))
    module.load_state_dict(state)


def save_motion_checkpoint(
    path: str | Path, encoder: nn.Module, projection: ProjectionHead
) -> None:
    config = {
        "variant": encoder.variant,
        "encoder": encoder.config(),
        "projection": projection.config(),
    }
    tensors = {**_state_dict_f32(encoder, "encoder"), **_state_dict_f32(projection, "projection")}
    write_tensor_container(path, MOTION_CHECKPOINT_MAGIC, config, tensors)


def load_motion_checkpoint(path: str | Path) -> tuple[nn.Module, ProjectionHead]:
    config, tensors = read_tensor_container(path, MOTION_CHECKPOINT_MAGIC)
    encoder = build_motion_encoder(config["variant"], **config["encoder"])
    proj_cfg = config["projection"]
    projection = ProjectionHead(proj_cfg["d_in"], proj_cfg["d_common"], proj_cfg["normalize"])
    _load_state_f64(encoder, tensors, "encoder")
    _load_state_f64(projection, tensors, "projection")
    return encoder, projection


@dataclass
class TextCheckpoint:
    """Deserialized text side: encoder, projection, temperature, upstream config."""

    encoder: nn.Module
    projection: ProjectionHead
    log_tau: float
    upstream: dict
    vocab: Vocabulary | None = None

    @property
    def variant(self) -> str:
        return self.encoder.variant


def save_text_checkpoint(
    path: str | Path,
    encoder: nn.Module,
    projection: ProjectionHead,
    log_tau: float,
    upstream: dict | None = None,
    vocab: Vocabulary | None = None,
) -> None:
    config = {
        "variant": encoder.variant,
        "encoder": encoder.config(),
        "projection": projection.config(),
        "upstream": upstream or {"kind": "files"},
    }
    if encoder.variant == "self-contained":
        if vocab is None:
            raise ValueError("self-contained text checkpoint needs its vocabulary")
        config["vocab"] = vocab.tokens
    tensors = {**_state_dict_f32(encoder, "encoder"), **_state_dict_f32(projection, "projection")}
    tensors["log_tau"] = np.asarray(log_tau, dtype="<f4")
    write_tensor_container(path, TEXT_CHECKPOINT_MAGIC, config, tensors)


def load_text_checkpoint(path: str | Path) -> TextCheckpoint:
    config, tensors = read_tensor_container(path, TEXT_CHECKPOINT_MAGIC)
    encoder = build_text_encoder(config["variant"], **config["encoder"])
    proj_cfg = config["projection"]
    projection = ProjectionHead(proj_cfg["d_in"], proj_cfg["d_common"], proj_cfg["normalize"])
    _load_state_f64(encoder, tensors, "encoder")
    _load_state_f64(projection, tensors, "projection")
    if "log_tau" not in tensors:
        raise FormatError("checkpoint is missing tensors: ['log_tau']")
    vocab = None
    if config["variant"] == "self-contained":
        tokens = config.get("vocab")
        if tokens is None:
            raise FormatError("self-contained checkpoint is missing its vocabulary")
        vocab = Vocabulary(tokens[1:])  # tokens[0] is the reserved OOV slot
    return TextCheckpoint(
        encoder=encoder,
        projection=projection,
        log_tau=float(tensors["log_tau"]),
        upstream=config.get("upstream", {"kind": "files"}),
        vocab=vocab,
    )
