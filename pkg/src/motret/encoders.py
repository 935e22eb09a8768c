"""Motion encoders: padded part-aggregated batches -> fixed-size embeddings.

Three architectures share one contract (`forward(batch) -> B x d_motion`):

* ``bigru`` — two-layer FFN dimensionality lift, then a bidirectional GRU;
  the embedding concatenates the final forward and backward states.
* ``upper-lower-gru`` — independent GRUs over the upper (torso + arms) and
  lower (legs) part streams, final states concatenated.
* ``mot`` — transformer with divided space-time attention: per-frame
  self-attention among the five part tokens, then per-part self-attention
  across frames (masked so padded frames get exactly zero weight), then a
  position-wise feed-forward, repeated ``depth`` times; mask-aware mean
  pooling and a linear readout produce the embedding.

Everything runs in float64; padded frames provably never influence outputs.
"""
from __future__ import annotations

import math

import torch
from torch import nn

from .data import FEATURE_DIM, PARTS, PaddedBatch
from .recurrent import GruStack

MOTION_VARIANTS = ("bigru", "upper-lower-gru", "mot")

UPPER_PARTS = ("torso", "left-arm", "right-arm")
LOWER_PARTS = ("left-leg", "right-leg")
_UPPER_IDX = tuple(PARTS.index(p) for p in UPPER_PARTS)
_LOWER_IDX = tuple(PARTS.index(p) for p in LOWER_PARTS)


def _check_batch(batch: PaddedBatch) -> None:
    if batch.features.shape[2] != len(PARTS) or batch.features.shape[3] != FEATURE_DIM:
        raise ValueError(
            f"batch features must be B x T x {len(PARTS)} x {FEATURE_DIM}, "
            f"got {tuple(batch.features.shape)}"
        )
    if (batch.lengths < 1).any():
        raise ValueError("empty sequence")


class BiGruMotionEncoder(nn.Module):
    variant = "bigru"

    def __init__(self, ffn_hidden: int = 128, d_lift: int = 128, hidden: int = 256, layers: int = 1):
        super().__init__()
        d_in = len(PARTS) * FEATURE_DIM
        self.ffn_hidden = ffn_hidden
        self.d_lift = d_lift
        self.hidden = hidden
        self.layers = layers
        self.lift = nn.Sequential(
            nn.Linear(d_in, ffn_hidden, dtype=torch.float64),
            nn.Tanh(),
            nn.Linear(ffn_hidden, d_lift, dtype=torch.float64),
        )
        self.forward_gru = GruStack(d_lift, hidden, layers)
        self.backward_gru = GruStack(d_lift, hidden, layers)

    @property
    def d_motion(self) -> int:
        return 2 * self.hidden

    def forward(self, batch: PaddedBatch) -> torch.Tensor:
        _check_batch(batch)
        b, t = batch.mask.shape
        x = self.lift(batch.features.reshape(b, t, -1))
        fwd = self.forward_gru(x, batch.mask)
        bwd = self.backward_gru(x, batch.mask, reverse=True)
        return torch.cat([fwd, bwd], dim=1)

    def config(self) -> dict:
        return {
            "ffn_hidden": self.ffn_hidden,
            "d_lift": self.d_lift,
            "hidden": self.hidden,
            "layers": self.layers,
        }


class UpperLowerGruMotionEncoder(nn.Module):
    """Independent recurrent encoders over the upper and lower body streams."""

    variant = "upper-lower-gru"

    def __init__(self, hidden: int = 256, layers: int = 1):
        super().__init__()
        self.hidden = hidden
        self.layers = layers
        self.upper_gru = GruStack(len(_UPPER_IDX) * FEATURE_DIM, hidden, layers)
        self.lower_gru = GruStack(len(_LOWER_IDX) * FEATURE_DIM, hidden, layers)

    @property
    def d_motion(self) -> int:
        return 2 * self.hidden

    def forward(self, batch: PaddedBatch) -> torch.Tensor:
        _check_batch(batch)
        b, t = batch.mask.shape
        upper = batch.features[:, :, _UPPER_IDX, :].reshape(b, t, -1)
        lower = batch.features[:, :, _LOWER_IDX, :].reshape(b, t, -1)
        up = self.upper_gru(upper, batch.mask)
        low = self.lower_gru(lower, batch.mask)
        return torch.cat([up, low], dim=1)

    def config(self) -> dict:
        return {"hidden": self.hidden, "layers": self.layers}


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, d_model: int, heads: int):
        super().__init__()
        if d_model % heads != 0:
            raise ValueError(f"heads ({heads}) must divide d_model ({d_model})")
        self.d_model = d_model
        self.heads = heads
        self.d_head = d_model // heads
        self.qkv = nn.Linear(d_model, 3 * d_model, dtype=torch.float64)
        self.out = nn.Linear(d_model, d_model, dtype=torch.float64)

    def forward(
        self,
        x: torch.Tensor,
        key_mask: torch.Tensor | None = None,
        need_weights: bool = False,
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        """x: N x L x d_model; key_mask: N x L (True = attendable)."""
        n, length, _ = x.shape
        qkv = self.qkv(x).reshape(n, length, 3, self.heads, self.d_head).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.transpose(-1, -2)) / math.sqrt(self.d_head)
        if key_mask is not None:
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        y = (weights @ v).transpose(1, 2).reshape(n, length, self.d_model)
        return self.out(y), (weights if need_weights else None)


class DividedSpaceTimeBlock(nn.Module):
    """Pre-norm residual block: spatial attention, temporal attention, FFN."""

    def __init__(self, d_model: int, heads: int, ffn_dim: int):
        super().__init__()
        self.spatial_norm = nn.LayerNorm(d_model, dtype=torch.float64)
        self.spatial_attn = MultiHeadSelfAttention(d_model, heads)
        self.temporal_norm = nn.LayerNorm(d_model, dtype=torch.float64)
        self.temporal_attn = MultiHeadSelfAttention(d_model, heads)
        self.ffn_norm = nn.LayerNorm(d_model, dtype=torch.float64)
        self.ffn = nn.Sequential(
            nn.Linear(d_model, ffn_dim, dtype=torch.float64),
            nn.GELU(),
            nn.Linear(ffn_dim, d_model, dtype=torch.float64),
        )

    def spatial_step(self, x: torch.Tensor) -> torch.Tensor:
        """Attention among the part tokens of each frame: frame-local by design."""
        b, t, p, d = x.shape
        flat = x.reshape(b * t, p, d)
        y, _ = self.spatial_attn(self.spatial_norm(flat))
        return x + y.reshape(b, t, p, d)

    def temporal_step(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Attention across frames within each part stream; padded keys get 0 weight."""
        b, t, p, d = x.shape
        streams = x.permute(0, 2, 1, 3).reshape(b * p, t, d)
        key_mask = mask.repeat_interleave(p, dim=0)
        y, _ = self.temporal_attn(self.temporal_norm(streams), key_mask=key_mask)
        y = y.reshape(b, p, t, d).permute(0, 2, 1, 3)
        return x + y

    def ffn_step(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.ffn(self.ffn_norm(x))

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.spatial_step(x)
        x = self.temporal_step(x, mask)
        return self.ffn_step(x)


class MotionTransformerEncoder(nn.Module):
    """Divided space-time attention over (frame, part) tokens."""

    variant = "mot"

    def __init__(
        self,
        d_model: int = 128,
        heads: int = 4,
        depth: int = 4,
        d_motion: int = 256,
        ffn_dim: int | None = None,
        max_len: int = 200,
    ):
        super().__init__()
        if depth < 1:
            raise ValueError("depth must be >= 1")
        self.d_model = d_model
        self.heads = heads
        self.depth = depth
        self._d_motion = d_motion
        self.ffn_dim = ffn_dim if ffn_dim is not None else 4 * d_model
        self.max_len = max_len
        self.embed = nn.Linear(FEATURE_DIM, d_model, dtype=torch.float64)
        self.pos_time = nn.Parameter(torch.randn(max_len, d_model, dtype=torch.float64) * 0.02)
        self.pos_part = nn.Parameter(torch.randn(len(PARTS), d_model, dtype=torch.float64) * 0.02)
        self.blocks = nn.ModuleList(
            DividedSpaceTimeBlock(d_model, heads, self.ffn_dim) for _ in range(depth)
        )
        self.final_norm = nn.LayerNorm(d_model, dtype=torch.float64)
        self.readout = nn.Linear(d_model, d_motion, dtype=torch.float64)

    @property
    def d_motion(self) -> int:
        return self._d_motion

    def forward(self, batch: PaddedBatch) -> torch.Tensor:
        _check_batch(batch)
        b, t = batch.mask.shape
        if t > self.max_len:
            raise ValueError(f"batch length {t} exceeds positional table max_len={self.max_len}")
        x = self.embed(batch.features)
        x = x + self.pos_time[:t][None, :, None, :] + self.pos_part[None, None, :, :]
        for block in self.blocks:
            x = block(x, batch.mask)
        x = self.final_norm(x)
        token_mask = batch.mask[:, :, None, None].to(x.dtype)
        pooled = (x * token_mask).sum(dim=(1, 2)) / (
            len(PARTS) * batch.lengths.to(x.dtype)[:, None]
        )
        return self.readout(pooled)

    def config(self) -> dict:
        return {
            "d_model": self.d_model,
            "heads": self.heads,
            "depth": self.depth,
            "d_motion": self._d_motion,
            "ffn_dim": self.ffn_dim,
            "max_len": self.max_len,
        }


_ENCODERS = {
    "bigru": BiGruMotionEncoder,
    "upper-lower-gru": UpperLowerGruMotionEncoder,
    "mot": MotionTransformerEncoder,
}


def build_motion_encoder(variant: str, **kwargs) -> nn.Module:
    try:
        cls = _ENCODERS[variant]
    except KeyError:
        raise ValueError(f"unknown motion encoder variant {variant!r}; known: {MOTION_VARIANTS}") from None
    return cls(**kwargs)
