"""Skeleton-sequence datasets: loading, body-part aggregation, batching, synthesis.

A motion is a ``T x J x 9`` feature tensor (six continuous-rotation components
plus three forward-kinematics position components per joint). Joints are
reduced to five body-part streams (torso, both arms, both legs) before any
encoder sees them.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .io_utils import (
    FormatError,
    expect_eof,
    expect_magic,
    read_f32,
    read_f32_array,
    read_u32,
    write_f32,
    write_f32_array,
    write_u32,
)

PARTS = ("torso", "left-arm", "right-arm", "left-leg", "right-leg")
FEATURE_DIM = 9
POSITION_SLICE = slice(6, 9)  # forward-kinematics xyz lives in the last 3 features
MOTION_MAGIC = b"MOTR"
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SkeletonTopology:
    """Joint layout of a skeleton: how raw joints map onto the five body parts."""

    joint_count: int
    part_map: Mapping[int, str]

    def __post_init__(self) -> None:
        if self.joint_count < 1:
            raise ValueError("joint_count must be >= 1")
        object.__setattr__(self, "part_map", dict(self.part_map))
        for joint in range(self.joint_count):
            part = self.part_map.get(joint)
            if part is None:
                raise ValueError(f"joint {joint} has no part assignment")
            if part not in PARTS:
                raise ValueError(f"joint {joint} mapped to unknown part {part!r}")
        extra = set(self.part_map) - set(range(self.joint_count))
        if extra:
            raise ValueError(f"part_map references joints outside 0..{self.joint_count - 1}: {sorted(extra)}")
        joints_by_part = {part: [] for part in PARTS}
        for joint in range(self.joint_count):
            joints_by_part[self.part_map[joint]].append(joint)
        for part in PARTS:
            if not joints_by_part[part]:
                raise ValueError(f"part {part!r} has no joints")
        object.__setattr__(self, "_joints_by_part", {p: tuple(js) for p, js in joints_by_part.items()})

    def joints_of(self, part: str) -> tuple[int, ...]:
        return self._joints_by_part[part]

    def to_dict(self) -> dict:
        return {
            "joint_count": self.joint_count,
            "part_map": {str(j): p for j, p in sorted(self.part_map.items())},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SkeletonTopology":
        return cls(
            joint_count=int(data["joint_count"]),
            part_map={int(j): p for j, p in data["part_map"].items()},
        )


def _span_parts(spans: Mapping[str, Sequence[int]]) -> dict[int, str]:
    part_map: dict[int, str] = {}
    for part, joints in spans.items():
        for joint in joints:
            part_map[joint] = part
    return part_map


# Joint order of the 21-joint mocap skeleton: root + spine/head chain,
# then left arm, right arm, left leg, right leg.
_KIT_21 = SkeletonTopology(
    joint_count=21,
    part_map=_span_parts(
        {
            "torso": range(0, 5),
            "left-arm": range(5, 8),
            "right-arm": range(8, 11),
            "left-leg": range(11, 16),
            "right-leg": range(16, 21),
        }
    ),
)

# 22-joint SMPL-style skeleton: pelvis/spine/neck/head chain with
# symmetric collar/shoulder/elbow/wrist arms and hip/knee/ankle/foot legs.
_HUMANML_22 = SkeletonTopology(
    joint_count=22,
    part_map=_span_parts(
        {
            "torso": (0, 3, 6, 9, 12, 15),
            "left-arm": (13, 16, 18, 20),
            "right-arm": (14, 17, 19, 21),
            "left-leg": (1, 4, 7, 10),
            "right-leg": (2, 5, 8, 11),
        }
    ),
)

TOPOLOGY_PRESETS: dict[str, SkeletonTopology] = {
    "kit-21": _KIT_21,
    "humanml-22": _HUMANML_22,
}


def topology_preset(name: str) -> SkeletonTopology:
    try:
        return TOPOLOGY_PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown topology preset {name!r}; known: {sorted(TOPOLOGY_PRESETS)}") from None


@dataclass(frozen=True, eq=False)
class SkeletonSequence:
    """One motion: ``frames`` has shape T x J x 9, values are dimensionless."""

    motion_id: str
    frames: np.ndarray
    fps: float

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3:
            raise ValueError(f"frames must be T x J x {FEATURE_DIM}, got ndim={frames.ndim}")
        if frames.shape[0] < 1:
            raise ValueError("T must be >= 1")
        if frames.shape[2] != FEATURE_DIM:
            raise ValueError(f"feature dimension must be {FEATURE_DIM}, got {frames.shape[2]}")
        if not np.isfinite(frames).all():
            raise ValueError("frames contain non-finite values")
        if not (self.fps > 0 and math.isfinite(self.fps)):
            raise ValueError(f"fps must be positive and finite, got {self.fps}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def joint_count(self) -> int:
        return self.frames.shape[1]

    def joint_positions(self) -> np.ndarray:
        """T x J x 3 forward-kinematics positions (for playback)."""
        return self.frames[:, :, POSITION_SLICE]


@dataclass(frozen=True)
class CaptionRecord:
    caption_id: str
    motion_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError(f"caption {self.caption_id!r} has empty text")


@dataclass(frozen=True)
class ManifestEntry:
    motion_id: str
    path: str
    split: str
    captions: tuple[CaptionRecord, ...]

    def __post_init__(self) -> None:
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        object.__setattr__(self, "captions", tuple(self.captions))
        for cap in self.captions:
            if cap.motion_id != self.motion_id:
                raise ValueError(
                    f"caption {cap.caption_id!r} references {cap.motion_id!r}, "
                    f"but is listed under {self.motion_id!r}"
                )


@dataclass(frozen=True)
class DatasetManifest:
    """Index of a dataset on disk: motions, captions, and split assignment."""

    topology: str | SkeletonTopology
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        seen_motions: set[str] = set()
        seen_captions: set[str] = set()
        for entry in self.entries:
            if entry.motion_id in seen_motions:
                raise ValueError(f"duplicate motion_id {entry.motion_id!r}")
            seen_motions.add(entry.motion_id)
            for cap in entry.captions:
                if cap.caption_id in seen_captions:
                    raise ValueError(f"duplicate caption_id {cap.caption_id!r}")
                seen_captions.add(cap.caption_id)

    def resolve_topology(self) -> SkeletonTopology:
        if isinstance(self.topology, SkeletonTopology):
            return self.topology
        return topology_preset(self.topology)

    def split_entries(self, split: str | None = None) -> tuple[ManifestEntry, ...]:
        if split is None:
            return self.entries
        if split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
        return tuple(e for e in self.entries if e.split == split)

    def captions_for(self, split: str | None = None) -> list[CaptionRecord]:
        return [cap for entry in self.split_entries(split) for cap in entry.captions]

    def to_dict(self) -> dict:
        topo = self.topology if isinstance(self.topology, str) else self.topology.to_dict()
        return {
            "topology": topo,
            "entries": [
                {
                    "motion_id": e.motion_id,
                    "path": e.path,
                    "split": e.split,
                    "captions": [{"caption_id": c.caption_id, "text": c.text} for c in e.captions],
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "DatasetManifest":
        topo = data["topology"]
        topology = topo if isinstance(topo, str) else SkeletonTopology.from_dict(topo)
        entries = []
        for raw in data["entries"]:
            captions = tuple(
                CaptionRecord(caption_id=c["caption_id"], motion_id=raw["motion_id"], text=c["text"])
                for c in raw["captions"]
            )
            entries.append(
                ManifestEntry(
                    motion_id=raw["motion_id"],
                    path=raw["path"],
                    split=raw["split"],
                    captions=captions,
                )
            )
        return cls(topology=topology, entries=tuple(entries))


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> DatasetManifest:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest {path} is not valid JSON: {exc}") from exc
    return DatasetManifest.from_dict(data)


def save_motion(seq: SkeletonSequence, path: str | Path) -> None:
    """Write the binary motion format: magic, u32 T/J/D, f32 fps, f32 payload."""
    frames = seq.frames
    with open(path, "wb") as f:
        f.write(MOTION_MAGIC)
        write_u32(f, frames.shape[0])
        write_u32(f, frames.shape[1])
        write_u32(f, frames.shape[2])
        write_f32(f, seq.fps)
        write_f32_array(f, frames)


def load_motion(path: str | Path, topology: SkeletonTopology | None = None) -> SkeletonSequence:
    """Load one motion file; the motion_id is the file stem.

    Fails rather than truncates: any header/payload inconsistency raises
    :class:`FormatError`.
    """
    path = Path(path)
    with open(path, "rb") as f:
        expect_magic(f, MOTION_MAGIC)
        t = read_u32(f, "T")
        j = read_u32(f, "J")
        d = read_u32(f, "D")
        fps = read_f32(f, "fps")
        if t < 1:
            raise FormatError("T must be >= 1")
        if j < 1:
            raise FormatError("J must be >= 1")
        if d != FEATURE_DIM:
            raise FormatError(f"D must be {FEATURE_DIM}, got {d}")
        if not (math.isfinite(fps) and fps > 0):
            raise FormatError(f"fps must be positive and finite, got {fps}")
        payload = read_f32_array(f, t * j * d, "frame payload")
        expect_eof(f)
    frames = payload.astype(np.float64).reshape(t, j, d)
    if not np.isfinite(frames).all():
        raise FormatError("frame payload contains non-finite values")
    if topology is not None and j != topology.joint_count:
        raise FormatError(f"J={j} does not match topology joint_count={topology.joint_count}")
    return SkeletonSequence(motion_id=path.stem, frames=frames, fps=fps)


def aggregate_body_parts(seq: SkeletonSequence, topology: SkeletonTopology) -> np.ndarray:
    """Reduce per-joint features to five part streams: T x 5 x 9.

    The part feature is the per-frame arithmetic mean over the member joints,
    which keeps the feature dimension at 9 and is permutation-invariant
    within a part.
    """
    if seq.joint_count != topology.joint_count:
        raise ValueError(
            f"sequence has {seq.joint_count} joints, topology expects {topology.joint_count}"
        )
    out = np.empty((seq.length, len(PARTS), FEATURE_DIM), dtype=np.float64)
    for p, part in enumerate(PARTS):
        joints = list(topology.joints_of(part))
        out[:, p, :] = seq.frames[:, joints, :].mean(axis=1)
    return out


@dataclass(frozen=True, eq=False)
class PaddedBatch:
    """Part-aggregated sequences padded to a common length.

    ``features`` is B x T_max x 5 x 9 (float64), ``mask`` is B x T_max with
    exactly ``lengths[i]`` leading True values per row; padded positions are
    zero-filled.
    """

    features: torch.Tensor
    mask: torch.Tensor
    lengths: torch.Tensor

    def __post_init__(self) -> None:
        if self.features.shape[:2] != self.mask.shape:
            raise ValueError("features and mask disagree on batch/time shape")
        if self.lengths.shape[0] != self.features.shape[0]:
            raise ValueError("lengths and features disagree on batch size")

    @property
    def batch_size(self) -> int:
        return self.features.shape[0]


def _center_crop(frames: np.ndarray, max_len: int) -> np.ndarray:
    t = frames.shape[0]
    if t <= max_len:
        return frames
    start = (t - max_len) // 2  # lower start index on ties
    return frames[start : start + max_len]


def pad_and_mask(seqs: Sequence[np.ndarray], max_len: int) -> PaddedBatch:
    """Pad (and center-crop) part-aggregated sequences into one batch."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if len(seqs) == 0:
        raise ValueError("cannot batch an empty sequence list")
    cropped = []
    for i, frames in enumerate(seqs):
        arr = np.asarray(frames, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[1] != len(PARTS) or arr.shape[2] != FEATURE_DIM:
            raise ValueError(
                f"sequence {i} must be T x {len(PARTS)} x {FEATURE_DIM}, got shape {arr.shape}"
            )
        cropped.append(_center_crop(arr, max_len))
    lengths = [c.shape[0] for c in cropped]
    t_max = max(lengths)
    features = torch.zeros((len(cropped), t_max, len(PARTS), FEATURE_DIM), dtype=torch.float64)
    mask = torch.zeros((len(cropped), t_max), dtype=torch.bool)
    for i, arr in enumerate(cropped):
        features[i, : arr.shape[0]] = torch.from_numpy(arr)
        mask[i, : arr.shape[0]] = True
    return PaddedBatch(features=features, mask=mask, lengths=torch.tensor(lengths, dtype=torch.long))


# --- Synthetic dataset -------------------------------------------------------
#
# Each synthetic motion is a parameterized oscillation: every body part gets a
# (speed, size) pair and its caption spells those parameters out, so the
# text-motion alignment is learnable from scratch.

SYNTH_FREQS = (0.5, 1.0, 2.0)  # Hz, indexed by speed parameter
SYNTH_AMPS = (0.35, 1.0)  # indexed by size parameter
SYNTH_SPEED_WORDS = ("slowly", "steadily", "quickly")
SYNTH_SIZE_WORDS = ("small", "wide")
_SYNTH_VERBS = {
    "torso": "sways",
    "left-arm": "waves",
    "right-arm": "waves",
    "left-leg": "swings",
    "right-leg": "swings",
}
_PART_PHRASE_NAMES = {
    "torso": "torso",
    "left-arm": "left arm",
    "right-arm": "right arm",
    "left-leg": "left leg",
    "right-leg": "right leg",
}

# Rest pose for the 21-joint preset (x right, y up, z forward), used so the
# position features trace a recognizable stick figure.
_REST_POSE_21 = np.array(
    [
        [0.00, 1.00, 0.00],  # root
        [0.00, 1.15, 0.00],  # lower spine
        [0.00, 1.30, 0.00],  # upper spine
        [0.00, 1.45, 0.00],  # neck
        [0.00, 1.62, 0.00],  # head
        [0.22, 1.42, 0.00],  # l shoulder
        [0.30, 1.14, 0.00],  # l elbow
        [0.34, 0.88, 0.00],  # l wrist
        [-0.22, 1.42, 0.00],  # r shoulder
        [-0.30, 1.14, 0.00],  # r elbow
        [-0.34, 0.88, 0.00],  # r wrist
        [0.11, 0.94, 0.00],  # l hip
        [0.13, 0.52, 0.00],  # l knee
        [0.15, 0.10, 0.00],  # l ankle
        [0.15, 0.05, 0.02],  # l heel
        [0.16, 0.02, 0.12],  # l toes
        [-0.11, 0.94, 0.00],  # r hip
        [-0.13, 0.52, 0.00],  # r knee
        [-0.15, 0.10, 0.00],  # r ankle
        [-0.15, 0.05, 0.02],  # r heel
        [-0.16, 0.02, 0.12],  # r toes
    ],
    dtype=np.float64,
)


def synth_caption(params: Sequence[tuple[int, int]]) -> str:
    phrases = []
    for part, (speed, size) in zip(PARTS, params):
        phrases.append(
            f"the {_PART_PHRASE_NAMES[part]} {_SYNTH_VERBS[part]} "
            f"{SYNTH_SPEED_WORDS[speed]} in {SYNTH_SIZE_WORDS[size]} arcs"
        )
    return ", ".join(phrases) + "."


def _synth_frames(
    params: Sequence[tuple[int, int]],
    topology: SkeletonTopology,
    t: int,
    fps: float,
    rng: np.random.Generator,
) -> np.ndarray:
    frames = np.zeros((t, topology.joint_count, FEATURE_DIM), dtype=np.float64)
    times = np.arange(t, dtype=np.float64) / fps
    for p, part in enumerate(PARTS):
        speed, size = params[p]
        freq = SYNTH_FREQS[speed]
        amp = SYNTH_AMPS[size]
        omega = 2.0 * math.pi * freq
        for joint in topology.joints_of(part):
            rot_phases = rng.uniform(0.0, 2.0 * math.pi, size=6)
            frames[:, joint, :6] = amp * np.sin(omega * times[:, None] + rot_phases[None, :])
            pos_phase = rng.uniform(0.0, 2.0 * math.pi)
            direction = rng.standard_normal(3)
            direction /= np.linalg.norm(direction)
            sway = 0.25 * amp * np.sin(omega * times + pos_phase)
            frames[:, joint, 6:] = _REST_POSE_21[joint][None, :] + sway[:, None] * direction[None, :]
    return frames


def generate_synthetic(
    n_pairs: int,
    seed: int,
    fps: float = 20.0,
    min_frames: int = 24,
    max_frames: int = 40,
    split: str = "train",
) -> tuple[DatasetManifest, dict[str, SkeletonSequence], list[CaptionRecord]]:
    """Build a deterministic text-motion dataset of `n_pairs` aligned pairs.

    Parameter tuples are sampled without replacement, so captions are
    pairwise distinct and every caption has a unique ground-truth motion.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    n_cells = (len(SYNTH_FREQS) * len(SYNTH_AMPS)) ** len(PARTS)
    if n_pairs > n_cells:
        raise ValueError(f"n_pairs must be <= {n_cells} for distinct parameter tuples")
    topology = topology_preset("kit-21")
    rng = np.random.default_rng(seed)
    cells = rng.choice(n_cells, size=n_pairs, replace=False)

    motions: dict[str, SkeletonSequence] = {}
    captions: list[CaptionRecord] = []
    entries: list[ManifestEntry] = []
    per_part = len(SYNTH_FREQS) * len(SYNTH_AMPS)
    for i, cell in enumerate(sorted(int(c) for c in cells)):
        params = []
        rest = cell
        for _ in PARTS:
            rest, code = divmod(rest, per_part)
            params.append((code % len(SYNTH_FREQS), code // len(SYNTH_FREQS)))
        motion_id = f"synth-{i:04d}"
        t = int(rng.integers(min_frames, max_frames + 1))
        frames = _synth_frames(params, topology, t, fps, rng)
        seq = SkeletonSequence(motion_id=motion_id, frames=frames, fps=fps)
        caption = CaptionRecord(
            caption_id=f"{motion_id}-c0", motion_id=motion_id, text=synth_caption(params)
        )
        motions[motion_id] = seq
        captions.append(caption)
        entries.append(
            ManifestEntry(
                motion_id=motion_id,
                path=f"motions/{motion_id}.motr",
                split=split,
                captions=(caption,),
            )
        )
    manifest = DatasetManifest(topology="kit-21", entries=tuple(entries))
    return manifest, motions, captions


def write_synthetic_dataset(out_dir: str | Path, n_pairs: int, seed: int, **kwargs) -> DatasetManifest:
    """Materialize a synthetic dataset: motions/ directory plus manifest.json."""
    out_dir = Path(out_dir)
    manifest, motions, _ = generate_synthetic(n_pairs, seed, **kwargs)
    (out_dir / "motions").mkdir(parents=True, exist_ok=True)
    for entry in manifest.entries:
        save_motion(motions[entry.motion_id], out_dir / entry.path)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
