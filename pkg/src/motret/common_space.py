"""Shared embedding space: projections, similarity, losses, training, grad checks.

Both modalities are projected to a d-dimensional space and L2-normalized, so
the batch similarity matrix is exactly cosine and downstream indexes can rank
by dot product. Two metric-learning objectives are provided:

* symmetric triplet loss with hardest in-batch negatives:
  ``(1/B) sum_i max_{j!=i}[a + S_ij - S_ii]_+ + max_{j!=i}[a + S_ji - S_ii]_+``
* symmetric InfoNCE: mean over i of the negative log row- and column-softmax
  probability of the diagonal, at temperature tau (learned via log_tau).

Gradients flow through reverse-mode autodiff; `grad_check` verifies every
trainable tensor against central finite differences in double precision.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from .data import PaddedBatch
from .encoders import MOTION_VARIANTS, build_motion_encoder
from .text import (
    TEXT_VARIANTS,
    AffineTextEncoder,
    LstmAggregatorTextEncoder,
    SelfContainedTextEncoder,
)

LOSSES = ("triplet", "infonce")


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of the angle between two nonzero vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"expected two vectors of equal dimension, got {u.shape} and {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity is undefined for zero vectors")
    return float(u @ v / (nu * nv))


def l2_normalize(x: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    return x / x.norm(dim=-1, keepdim=True).clamp_min(eps)


def similarity_matrix(motion_emb: torch.Tensor, text_emb: torch.Tensor) -> torch.Tensor:
    """B x B cosine similarities; entry (i, j) compares motion i with caption j."""
    if motion_emb.shape != text_emb.shape:
        raise ValueError(
            f"embedding shapes disagree: {tuple(motion_emb.shape)} vs {tuple(text_emb.shape)}"
        )
    return l2_normalize(motion_emb) @ l2_normalize(text_emb).T


def triplet_loss(similarities: torch.Tensor, margin: float = 0.2) -> torch.Tensor:
    """Symmetric hinge loss against the hardest in-batch negative."""
    s = torch.as_tensor(similarities, dtype=torch.float64) if not torch.is_tensor(similarities) else similarities
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {tuple(s.shape)}")
    b = s.shape[0]
    if b < 2:
        raise ValueError("triplet loss needs batch size >= 2 (no negatives exist)")
    if margin < 0:
        raise ValueError("margin must be >= 0")
    diag = s.diagonal()
    eye = torch.eye(b, dtype=torch.bool, device=s.device)
    neg_inf = torch.tensor(float("-inf"), dtype=s.dtype, device=s.device)
    row_args = (margin + s - diag[:, None]).masked_fill(eye, neg_inf)
    col_args = (margin + s - diag[None, :]).masked_fill(eye, neg_inf)
    row_term = torch.relu(row_args.max(dim=1).values)
    col_term = torch.relu(col_args.max(dim=0).values)
    return (row_term + col_term).mean()


def infonce_loss(similarities: torch.Tensor, tau: torch.Tensor | float) -> torch.Tensor:
    """Symmetric cross-entropy over rows and columns of S / tau."""
    s = torch.as_tensor(similarities, dtype=torch.float64) if not torch.is_tensor(similarities) else similarities
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {tuple(s.shape)}")
    tau_value = tau.item() if torch.is_tensor(tau) else float(tau)
    if not tau_value > 0:
        raise ValueError(f"temperature must be > 0, got {tau_value}")
    logits = s / tau
    row = torch.log_softmax(logits, dim=1).diagonal()
    col = torch.log_softmax(logits, dim=0).diagonal()
    return -(row + col).mean()


class ProjectionHead(nn.Module):
    """Affine map into the common space, optionally followed by L2 normalization."""

    def __init__(self, d_in: int, d_common: int, normalize: bool = True):
        super().__init__()
        if d_common < 2:
            raise ValueError("d_common must be >= 2")
        self.d_in = d_in
        self.d_common = d_common
        self.normalize = normalize
        self.proj = nn.Linear(d_in, d_common, dtype=torch.float64)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.proj(x)
        return l2_normalize(y) if self.normalize else y

    def config(self) -> dict:
        return {"d_in": self.d_in, "d_common": self.d_common, "normalize": self.normalize}


@dataclass(eq=False)
class TextBatch:
    """Inputs for one text-encoder variant; exactly one path is populated."""

    sentences: torch.Tensor | None = None  # affine: B x d_sent
    tokens: torch.Tensor | None = None  # lstm-aggregator: B x L x d_tok; self-contained: B x L ids
    mask: torch.Tensor | None = None


class RetrievalModel(nn.Module):
    """Two-stream model: motion and text encoders plus their projection heads."""

    def __init__(
        self,
        motion_encoder: nn.Module,
        text_encoder: nn.Module,
        d_common: int,
        normalize: bool = True,
        tau_init: float = 0.07,
    ):
        super().__init__()
        if not tau_init > 0:
            raise ValueError("tau_init must be > 0")
        self.motion_encoder = motion_encoder
        self.text_encoder = text_encoder
        self.motion_proj = ProjectionHead(motion_encoder.d_motion, d_common, normalize)
        self.text_proj = ProjectionHead(text_encoder.d_text, d_common, normalize)
        self.log_tau = nn.Parameter(torch.tensor(math.log(tau_init), dtype=torch.float64))

    @property
    def tau(self) -> torch.Tensor:
        return self.log_tau.exp()

    @property
    def d_common(self) -> int:
        return self.motion_proj.d_common

    def encode_motions(self, batch: PaddedBatch) -> torch.Tensor:
        return self.motion_proj(self.motion_encoder(batch))

    def encode_texts(self, batch: TextBatch) -> torch.Tensor:
        if self.text_encoder.variant == "affine":
            if batch.sentences is None:
                raise ValueError("affine text encoder needs sentence embeddings")
            features = self.text_encoder(batch.sentences)
        else:
            if batch.tokens is None or batch.mask is None:
                raise ValueError(f"{self.text_encoder.variant} text encoder needs tokens and mask")
            features = self.text_encoder(batch.tokens, batch.mask)
        return self.text_proj(features)

    def forward(self, motion_batch: PaddedBatch, text_batch: TextBatch) -> tuple[torch.Tensor, torch.Tensor]:
        return self.encode_motions(motion_batch), self.encode_texts(text_batch)


def build_text_encoder(variant: str, **kwargs) -> nn.Module:
    if variant == "affine":
        return AffineTextEncoder(**kwargs)
    if variant == "lstm-aggregator":
        return LstmAggregatorTextEncoder(**kwargs)
    if variant == "self-contained":
        return SelfContainedTextEncoder(**kwargs)
    raise ValueError(f"unknown text encoder variant {variant!r}; known: {TEXT_VARIANTS}")


@dataclass
class TrainConfig:
    """Training configuration; serializable to/from the JSON config file."""

    motion_variant: str = "mot"
    text_variant: str = "affine"
    loss: str = "infonce"
    d_common: int = 256
    margin: float = 0.2
    tau_init: float = 0.07
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 1
    seed: int = 0
    max_len: int = 200
    normalize: bool = True
    motion_kwargs: dict = field(default_factory=dict)
    text_kwargs: dict = field(default_factory=dict)
    upstream: dict = field(default_factory=lambda: {"kind": "hashed", "dim": 64, "seed": 0})

    def __post_init__(self) -> None:
        if self.motion_variant not in MOTION_VARIANTS:
            raise ValueError(f"unknown motion_variant {self.motion_variant!r}")
        if self.text_variant not in TEXT_VARIANTS:
            raise ValueError(f"unknown text_variant {self.text_variant!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.batch_size < (2 if self.loss == "triplet" else 1):
            raise ValueError(f"batch_size too small for loss {self.loss!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls(**json.loads(text))

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


class TrainingError(RuntimeError):
    """Raised when a step produces a non-finite loss or gradient."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class Trainer:
    """Deterministic single-threaded trainer with adaptive-moment updates."""

    def __init__(self, model: RetrievalModel, loss: str = "infonce", lr: float = 1e-4, margin: float = 0.2):
        if loss not in LOSSES:
            raise ValueError(f"unknown loss {loss!r}")
        self.model = model
        self.loss = loss
        self.margin = margin
        self.optimizer = torch.optim.Adam(model.parameters(), lr=lr)
        self.step_count = 0

    def compute_loss(self, motion_batch: PaddedBatch, text_batch: TextBatch) -> torch.Tensor:
        motion_emb, text_emb = self.model(motion_batch, text_batch)
        sims = similarity_matrix(motion_emb, text_emb)
        if self.loss == "triplet":
            return triplet_loss(sims, self.margin)
        return infonce_loss(sims, self.model.tau)

    def train_step(self, motion_batch: PaddedBatch, text_batch: TextBatch) -> float:
        loss = self.compute_loss(motion_batch, text_batch)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(f"non-finite loss {value}", self.step_count)
        self.optimizer.zero_grad()
        loss.backward()
        for name, param in self.model.named_parameters():
            if param.grad is not None and not torch.isfinite(param.grad).all():
                raise TrainingError(f"non-finite gradient in {name}", self.step_count)
        self.optimizer.step()
        self.step_count += 1
        return value


# --- Gradient verification ---------------------------------------------------


@dataclass
class GradCheckConfig:
    """Small full-pipeline instance for finite-difference verification."""

    motion_variant: str = "mot"
    text_variant: str = "affine"
    loss: str = "infonce"
    batch: int = 2
    frames: int = 4
    d_common: int = 8
    d_sent: int = 6
    d_tok: int = 6
    vocab_size: int = 11
    token_len: int = 5
    margin: float = 0.2
    tau_init: float = 0.07
    normalize: bool = True
    motion_kwargs: dict = field(default_factory=dict)
    text_kwargs: dict = field(default_factory=dict)


_SMALL_MOTION_KWARGS = {
    "bigru": {"ffn_hidden": 10, "d_lift": 8, "hidden": 6, "layers": 1},
    "upper-lower-gru": {"hidden": 6, "layers": 1},
    "mot": {"d_model": 8, "heads": 2, "depth": 1, "d_motion": 10, "ffn_dim": 12, "max_len": 16},
}
_SMALL_TEXT_KWARGS = {
    "affine": {"d_text": 7},
    "lstm-aggregator": {"hidden": 6, "layers": 2},
    "self-contained": {"d_emb": 5, "hidden": 6, "layers": 1},
}


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    h: float
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def failing(self) -> dict[str, float]:
        return {k: v for k, v in self.errors.items() if v > self.tolerance}

    @property
    def passed(self) -> bool:
        return not self.failing()

    def format_table(self) -> str:
        width = max((len(k) for k in self.errors), default=4)
        lines = [f"{'tensor':<{width}}  max rel err"]
        for name, err in sorted(self.errors.items(), key=lambda kv: -kv[1]):
            flag = "  FAIL" if err > self.tolerance else ""
            lines.append(f"{name:<{width}}  {err:.3e}{flag}")
        return "\n".join(lines)


def _build_check_instance(
    config: GradCheckConfig, seed: int
) -> tuple[RetrievalModel, PaddedBatch, TextBatch, Callable[[], torch.Tensor]]:
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    motion_kwargs = {**_SMALL_MOTION_KWARGS[config.motion_variant], **config.motion_kwargs}
    text_kwargs = {**_SMALL_TEXT_KWARGS[config.text_variant], **config.text_kwargs}
    if config.text_variant == "affine":
        text_kwargs.setdefault("d_sent", config.d_sent)
    elif config.text_variant == "lstm-aggregator":
        text_kwargs.setdefault("d_tok", config.d_tok)
    else:
        text_kwargs.setdefault("vocab_size", config.vocab_size)

    model = RetrievalModel(
        motion_encoder=build_motion_encoder(config.motion_variant, **motion_kwargs),
        text_encoder=build_text_encoder(config.text_variant, **text_kwargs),
        d_common=config.d_common,
        normalize=config.normalize,
        tau_init=config.tau_init,
    )

    b, t = config.batch, config.frames
    lengths = [t - (i % max(t - 1, 1)) for i in range(b)]
    features = torch.zeros((b, t, 5, 9), dtype=torch.float64)
    mask = torch.zeros((b, t), dtype=torch.bool)
    for i, length in enumerate(lengths):
        features[i, :length] = torch.from_numpy(rng.standard_normal((length, 5, 9)))
        mask[i, :length] = True
    motion_batch = PaddedBatch(
        features=features, mask=mask, lengths=torch.tensor(lengths, dtype=torch.long)
    )

    if config.text_variant == "affine":
        text_batch = TextBatch(
            sentences=torch.from_numpy(rng.standard_normal((b, text_kwargs["d_sent"])))
        )
    else:
        l_max = config.token_len
        tok_lengths = [l_max - (i % max(l_max - 1, 1)) for i in range(b)]
        tok_mask = torch.zeros((b, l_max), dtype=torch.bool)
        for i, length in enumerate(tok_lengths):
            tok_mask[i, :length] = True
        if config.text_variant == "lstm-aggregator":
            tokens = torch.zeros((b, l_max, text_kwargs["d_tok"]), dtype=torch.float64)
            for i, length in enumerate(tok_lengths):
                tokens[i, :length] = torch.from_numpy(
                    rng.standard_normal((length, text_kwargs["d_tok"]))
                )
        else:
            tokens = torch.from_numpy(
                rng.integers(0, text_kwargs["vocab_size"], size=(b, l_max))
            ).long()
        text_batch = TextBatch(tokens=tokens, mask=tok_mask)

    def loss_fn() -> torch.Tensor:
        motion_emb, text_emb = model(motion_batch, text_batch)
        sims = similarity_matrix(motion_emb, text_emb)
        if config.loss == "triplet":
            return triplet_loss(sims, config.margin)
        return infonce_loss(sims, model.tau)

    return model, motion_batch, text_batch, loss_fn


def _triplet_kink_margin(sims: torch.Tensor, margin: float) -> float:
    """Distance of the hinge system from its nearest non-smooth point."""
    b = sims.shape[0]
    diag = sims.diagonal()
    eye = torch.eye(b, dtype=torch.bool)
    neg_inf = torch.tensor(float("-inf"), dtype=sims.dtype)
    closest = math.inf
    for args in (
        (margin + sims - diag[:, None]).masked_fill(eye, neg_inf),
        (margin + sims - diag[None, :]).masked_fill(eye, neg_inf).T,
    ):
        top2 = args.topk(min(2, b - 1), dim=1).values
        closest = min(closest, top2[:, 0].abs().min().item())  # hinge at zero
        if top2.shape[1] > 1:
            closest = min(closest, (top2[:, 0] - top2[:, 1]).min().item())  # argmax switch
    return closest


def grad_check(
    config: GradCheckConfig | None = None,
    seed: int = 0,
    h: float = 1e-5,
    tolerance: float = 1e-4,
    kink_clearance: float = 1e-3,
) -> GradCheckReport:
    """Compare autodiff gradients with central finite differences.

    For the triplet loss, seeds are advanced until every hinge argument and
    every argmax gap clears `kink_clearance`, so the check runs at a point
    where the loss is locally smooth.

    Relative error uses a denominator floor of 1e-5: coordinates whose true
    gradient is identically zero (attention key biases cancel inside the row
    softmax, for example) carry only finite-difference noise (~1e-10), and
    the floor turns them into an absolute bound of tolerance * 1e-5 instead
    of letting that noise dominate the report.
    """
    config = config or GradCheckConfig()
    attempt_seed = seed
    for _ in range(64):
        model, motion_batch, text_batch, loss_fn = _build_check_instance(config, attempt_seed)
        if config.loss != "triplet":
            break
        with torch.no_grad():
            sims = similarity_matrix(*model(motion_batch, text_batch))
        if _triplet_kink_margin(sims, config.margin) >= kink_clearance:
            break
        attempt_seed += 1
    else:
        raise RuntimeError("could not find a kink-free triplet instance")

    loss = loss_fn()
    model.zero_grad()
    loss.backward()
    analytic = {
        name: p.grad.detach().clone()
        for name, p in model.named_parameters()
        if p.grad is not None
    }

    errors: dict[str, float] = {}
    with torch.no_grad():
        for name, param in model.named_parameters():
            if name not in analytic:
                continue
            flat = param.data.view(-1)
            grad_flat = analytic[name].view(-1)
            worst = 0.0
            for idx in range(flat.numel()):
                orig = flat[idx].item()
                flat[idx] = orig + h
                f_plus = loss_fn().item()
                flat[idx] = orig - h
                f_minus = loss_fn().item()
                flat[idx] = orig
                fd = (f_plus - f_minus) / (2.0 * h)
                g = grad_flat[idx].item()
                rel = abs(fd - g) / max(abs(fd), abs(g), 1e-5)
                worst = max(worst, rel)
            errors[name] = worst
    return GradCheckReport(errors=errors, h=h, tolerance=tolerance)
