"""Dataset contract: manifest + binary feature files, speaker-independent splits,
and presence-homogeneous batch construction.

A sample carries an acoustic feature sequence, a visual feature sequence, or both.
Batches never mix presence patterns so the training loop can run its per-branch
updates as batch-level conditionals.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import torch

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"VAVF"
FEATURE_VERSION = 1


class DataError(Exception):
    """Raised for malformed manifests, feature files, or invalid dataset requests."""


class Modality(str, Enum):
    ACOUSTIC = "acoustic"
    VISUAL = "visual"


class Task(str, Enum):
    CLASSIFICATION = "classification"
    REGRESSION = "regression"


class Split(str, Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


class Presence(str, Enum):
    AUDIO_ONLY = "audio_only"
    VIDEO_ONLY = "video_only"
    PAIRED = "paired"


@dataclass(frozen=True)
class FeatureSequence:
    """A (T, D) float32 frame matrix for one modality of one sample."""

    modality: Modality
    frames: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim != 2:
            raise DataError(f"feature frames must be 2-D (T, D), got shape {frames.shape}")
        if frames.shape[0] < 1 or frames.shape[1] < 1:
            raise DataError(f"feature frames must be non-empty, got shape {frames.shape}")
        if not np.isfinite(frames).all():
            raise DataError("feature frames contain non-finite values")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class EmotionTarget:
    """Either a class index out of ``num_classes`` or an (arousal, valence, dominance) triple."""

    class_index: Optional[int] = None
    num_classes: Optional[int] = None
    attributes: Optional[tuple[float, float, float]] = None

    def __post_init__(self):
        if (self.class_index is None) == (self.attributes is None):
            raise DataError("target must be exactly one of class_index or attributes")
        if self.class_index is not None:
            if self.num_classes is None or self.num_classes < 2:
                raise DataError("categorical target needs num_classes >= 2")
            if not 0 <= self.class_index < self.num_classes:
                raise DataError(
                    f"class_index {self.class_index} out of range for {self.num_classes} classes"
                )
        else:
            attrs = tuple(float(a) for a in self.attributes)
            if len(attrs) != 3 or not all(math.isfinite(a) for a in attrs):
                raise DataError(f"attributes must be 3 finite values, got {self.attributes}")
            object.__setattr__(self, "attributes", attrs)

    @property
    def is_categorical(self) -> bool:
        return self.class_index is not None


@dataclass(frozen=True)
class Sample:
    id: str
    speaker: str
    audio: Optional[FeatureSequence]
    video: Optional[FeatureSequence]
    target: EmotionTarget

    def __post_init__(self):
        if self.audio is None and self.video is None:
            raise DataError(f"empty sample {self.id!r}: neither audio nor video present")
        if self.audio is not None and self.audio.modality is not Modality.ACOUSTIC:
            raise DataError(f"sample {self.id!r}: audio field holds a {self.audio.modality} sequence")
        if self.video is not None and self.video.modality is not Modality.VISUAL:
            raise DataError(f"sample {self.id!r}: video field holds a {self.video.modality} sequence")

    @property
    def presence(self) -> Presence:
        if self.audio is not None and self.video is not None:
            return Presence.PAIRED
        return Presence.AUDIO_ONLY if self.audio is not None else Presence.VIDEO_ONLY


@dataclass
class Dataset:
    task: Task
    samples: list[Sample]
    num_classes: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task is Task.CLASSIFICATION and (self.num_classes is None or self.num_classes < 2):
            raise DataError("classification dataset needs num_classes >= 2")
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate sample ids in dataset")
        for s in self.samples:
            if s.target.is_categorical != (self.task is Task.CLASSIFICATION):
                raise DataError(f"sample {s.id!r} target does not match dataset task {self.task.value}")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def by_id(self, sample_id: str) -> Sample:
        if not hasattr(self, "_index"):
            self._index = {s.id: s for s in self.samples}
        return self._index[sample_id]

    def speakers(self) -> list[str]:
        return sorted({s.speaker for s in self.samples})

    def subset(self, ids: Sequence[str]) -> list[Sample]:
        return [self.by_id(i) for i in ids]


# ---------------------------------------------------------------------------
# Binary feature files
# ---------------------------------------------------------------------------

def write_feature_file(path: str | Path, frames: np.ndarray) -> None:
    """Write a (T, D) float32 matrix: magic, u32 version, u32 T, u32 D, then row-major payload."""
    frames = np.ascontiguousarray(frames, dtype=np.float32)
    if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
        raise DataError(f"feature payload must be a non-empty (T, D) matrix, got {frames.shape}")
    header = FEATURE_MAGIC + struct.pack("<III", FEATURE_VERSION, frames.shape[0], frames.shape[1])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frames.astype("<f4").tobytes())


def read_feature_file(path: str | Path) -> np.ndarray:
    """Read a feature file back into a (T, D) float32 matrix, validating the header."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"feature file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 16:
        raise DataError(f"{path}: malformed header (file too short)")
    if raw[:4] != FEATURE_MAGIC:
        raise DataError(f"{path}: malformed header (bad magic {raw[:4]!r})")
    version, num_frames, dim = struct.unpack("<III", raw[4:16])
    if version != FEATURE_VERSION:
        raise DataError(f"{path}: unsupported feature file version {version}")
    if num_frames < 1 or dim < 1:
        raise DataError(f"{path}: malformed header (T={num_frames}, D={dim})")
    expected = 16 + 4 * num_frames * dim
    if len(raw) < expected:
        raise DataError(f"{path}: truncated payload ({len(raw)} bytes, expected {expected})")
    if len(raw) > expected:
        raise DataError(f"{path}: oversized payload ({len(raw)} bytes, expected {expected})")
    frames = np.frombuffer(raw, dtype="<f4", offset=16).reshape(num_frames, dim)
    return frames.copy()  # own, writable memory (frombuffer views are read-only)


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def load_manifest(
    path: str | Path,
    acoustic_dim: Optional[int] = None,
    visual_dim: Optional[int] = None,
) -> Dataset:
    """Load a manifest JSON and its referenced feature files.

    Relative feature paths are resolved against the manifest's directory. When
    ``acoustic_dim`` / ``visual_dim`` are given, every file's declared dimension is
    checked against them; otherwise dimensions only need to be mutually consistent.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc

    try:
        task = Task(doc["task"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: manifest 'task' must be classification or regression") from exc
    num_classes = doc.get("num_classes")
    if task is Task.CLASSIFICATION and num_classes is None:
        raise DataError(f"{path}: classification manifest needs num_classes")

    root = path.parent
    expected = {Modality.ACOUSTIC: acoustic_dim, Modality.VISUAL: visual_dim}

    def load_side(entry: dict, key: str, modality: Modality) -> Optional[FeatureSequence]:
        rel = entry.get(key)
        if rel is None:
            return None
        frames = read_feature_file(root / rel)
        want = expected[modality]
        if want is not None and frames.shape[1] != want:
            raise DataError(
                f"{rel}: {modality.value} dimension {frames.shape[1]} does not match configured {want}"
            )
        if want is None:
            expected[modality] = frames.shape[1]
        return FeatureSequence(modality, frames)

    samples = []
    for entry in doc.get("samples", []):
        try:
            sid = entry["id"]
            speaker = entry["speaker"]
            raw_target = entry["target"]
        except KeyError as exc:
            raise DataError(f"{path}: sample entry missing key {exc}") from exc
        audio = load_side(entry, "audio_path", Modality.ACOUSTIC)
        video = load_side(entry, "video_path", Modality.VISUAL)
        if task is Task.CLASSIFICATION:
            target = EmotionTarget(class_index=int(raw_target), num_classes=int(num_classes))
        else:
            target = EmotionTarget(attributes=tuple(raw_target))
        samples.append(Sample(id=sid, speaker=speaker, audio=audio, video=video, target=target))

    return Dataset(task=task, samples=samples, num_classes=num_classes)


def save_manifest(dataset: Dataset, out_dir: str | Path, name: str = "manifest.json") -> Path:
    """Write feature files plus a manifest JSON under ``out_dir``; returns manifest path."""
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for sample in dataset.samples:
        entry: dict = {"id": sample.id, "speaker": sample.speaker}
        for key, seq in (("audio_path", sample.audio), ("video_path", sample.video)):
            if seq is None:
                entry[key] = None
            else:
                rel = f"features/{sample.id}.{seq.modality.value}.vavf"
                write_feature_file(out_dir / rel, seq.frames)
                entry[key] = rel
        if dataset.task is Task.CLASSIFICATION:
            entry["target"] = sample.target.class_index
        else:
            entry["target"] = list(sample.target.attributes)
        entries.append(entry)
    doc = {"task": dataset.task.value, "num_classes": dataset.num_classes, "samples": entries}
    manifest_path = out_dir / name
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return manifest_path


# ---------------------------------------------------------------------------
# Speaker-independent splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitAssignment:
    """Immutable map sample-id -> split, with every speaker confined to one split."""

    by_id: dict[str, Split]
    order: tuple[str, ...]

    def ids(self, split: Split) -> list[str]:
        return [i for i in self.order if self.by_id[i] is split]


def make_splits(
    dataset: Dataset,
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15),
    seed: int = 0,
) -> SplitAssignment:
    """Assign whole speakers to train/dev/test so sample fractions approximate ``ratios``.

    Deterministic for a fixed seed; different seeds shuffle speakers differently.
    """
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-6:
        raise DataError(f"split ratios must be positive and sum to 1, got {ratios}")
    speakers = dataset.speakers()
    if len(speakers) < 3:
        raise DataError(f"need at least 3 distinct speakers to split, got {len(speakers)}")

    rng = np.random.default_rng(seed)
    order = list(speakers)
    rng.shuffle(order)
    counts = {spk: 0 for spk in speakers}
    for s in dataset.samples:
        counts[s.speaker] += 1
    total = len(dataset)
    t_train = ratios[0] * total
    t_dev = (ratios[0] + ratios[1]) * total

    split_speakers: dict[Split, list[str]] = {Split.TRAIN: [], Split.DEV: [], Split.TEST: []}
    cum = 0
    for spk in order:
        if cum < t_train:
            split_speakers[Split.TRAIN].append(spk)
        elif cum < t_dev:
            split_speakers[Split.DEV].append(spk)
        else:
            split_speakers[Split.TEST].append(spk)
        cum += counts[spk]

    # Every split must own at least one speaker; steal from the most populated one.
    for split in (Split.DEV, Split.TEST):
        if not split_speakers[split]:
            donor = max(split_speakers, key=lambda s: len(split_speakers[s]))
            split_speakers[split].append(split_speakers[donor].pop())

    speaker_split = {spk: split for split, spks in split_speakers.items() for spk in spks}
    by_id = {s.id: speaker_split[s.speaker] for s in dataset.samples}
    return SplitAssignment(by_id=by_id, order=tuple(s.id for s in dataset.samples))


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    """Presence-homogeneous minibatch with zero-padded frame tensors."""

    presence: Presence
    ids: list[str]
    targets: list[EmotionTarget]
    audio: Optional[torch.Tensor] = None          # (B, Ta, Da) float32
    audio_lengths: Optional[torch.Tensor] = None  # (B,) int64
    video: Optional[torch.Tensor] = None
    video_lengths: Optional[torch.Tensor] = None

    def __len__(self) -> int:
        return len(self.ids)

    def class_targets(self) -> torch.Tensor:
        return torch.tensor([t.class_index for t in self.targets], dtype=torch.long)

    def attribute_targets(self) -> torch.Tensor:
        return torch.tensor([t.attributes for t in self.targets], dtype=torch.float32)


def pad_sequences(seqs: list[np.ndarray], dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack variable-length (T, D) arrays into a zero-padded (B, Tmax, D) tensor plus lengths."""
    lengths = torch.tensor([s.shape[0] for s in seqs], dtype=torch.long)
    t_max = int(lengths.max())
    dim = seqs[0].shape[1]
    out = torch.zeros(len(seqs), t_max, dim, dtype=dtype)
    for i, s in enumerate(seqs):
        out[i, : s.shape[0]] = torch.as_tensor(s, dtype=dtype)
    return out, lengths


def collate(samples: Sequence[Sample], presence: Presence) -> Batch:
    batch = Batch(presence=presence, ids=[s.id for s in samples], targets=[s.target for s in samples])
    if presence in (Presence.AUDIO_ONLY, Presence.PAIRED):
        if any(s.audio is None for s in samples):
            raise DataError(f"presence {presence.value} requires audio on every sample in the batch")
        batch.audio, batch.audio_lengths = pad_sequences([s.audio.frames for s in samples])
    if presence in (Presence.VIDEO_ONLY, Presence.PAIRED):
        if any(s.video is None for s in samples):
            raise DataError(f"presence {presence.value} requires video on every sample in the batch")
        batch.video, batch.video_lengths = pad_sequences([s.video.frames for s in samples])
    return batch


def batch_iter(
    dataset: Dataset,
    ids: Sequence[str],
    batch_size: int,
    seed: int = 0,
    epoch: int = 0,
) -> Iterator[Batch]:
    """Yield presence-homogeneous batches covering every id exactly once.

    Samples are grouped by presence pattern, shuffled within groups, chunked, and the
    resulting batch order shuffled again; everything is deterministic per (seed, epoch).
    """
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    if not ids:
        raise DataError("cannot iterate an empty split")
    samples = dataset.subset(ids)
    rng = np.random.default_rng([seed, epoch])

    groups: dict[Presence, list[Sample]] = {}
    for s in samples:
        groups.setdefault(s.presence, []).append(s)

    batches: list[tuple[Presence, list[Sample]]] = []
    for presence in (Presence.PAIRED, Presence.AUDIO_ONLY, Presence.VIDEO_ONLY):
        members = groups.get(presence)
        if not members:
            continue
        perm = rng.permutation(len(members))
        shuffled = [members[i] for i in perm]
        for start in range(0, len(shuffled), batch_size):
            batches.append((presence, shuffled[start : start + batch_size]))

    for i in rng.permutation(len(batches)):
        presence, members = batches[i]
        yield collate(members, presence)
