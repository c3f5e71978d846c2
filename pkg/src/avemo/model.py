"""The full audio-visual network: per-modality branches, a shared encoder stack
with residual connections, prediction and reconstruction heads, and the
audio-visual fusion head, plus the three inference routes.

Parameters fall into four disjoint groups (acoustic, visual, shared, fusion) that
the trainer updates independently.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .conformer import ConformerEncoder, EncoderConfig, FrontendProjection, add_positions, lengths_to_mask, zero_init_biases
from .data import Modality, Sample, Task, pad_sequences
from .optim import (
    GROUP_ACOUSTIC,
    GROUP_FUSION,
    GROUP_SHARED,
    GROUP_VISUAL,
    ParameterGroup,
    check_partition,
)


class FusionMode(str, Enum):
    AV_HEAD = "av_head"
    AVERAGE = "average"


class Condition(str, Enum):
    AUDIO_VISUAL = "audio_visual"
    ACOUSTIC = "acoustic"
    VISUAL = "visual"


class ConditionUnavailableError(RuntimeError):
    """A forced inference condition requires a modality the sample does not have."""


@dataclass
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    task: Task = Task.CLASSIFICATION
    num_classes: int = 6
    acoustic_dim: int = 1024
    visual_dim: int = 1408
    head_hidden: tuple[int, int] = (512, 256)
    head_dropout: float = 0.2
    alpha: float = 1.0
    fusion: FusionMode = FusionMode.AV_HEAD
    use_residual: bool = True
    use_reconstruction: bool = True
    frontend_kernel: int = 3

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)
        if isinstance(self.task, str):
            self.task = Task(self.task)
        if isinstance(self.fusion, str):
            self.fusion = FusionMode(self.fusion)
        self.head_hidden = tuple(self.head_hidden)
        if self.alpha < 0:
            raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if len(self.head_hidden) != 2 or min(self.head_hidden) < 1:
            raise ValueError(f"head_hidden must be two positive widths, got {self.head_hidden}")
        if self.task is Task.CLASSIFICATION and self.num_classes < 2:
            raise ValueError("classification needs num_classes >= 2")
        if min(self.acoustic_dim, self.visual_dim) < 1:
            raise ValueError("feature dims must be positive")

    @property
    def out_dim(self) -> int:
        return self.num_classes if self.task is Task.CLASSIFICATION else 3

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["task"] = self.task.value
        doc["fusion"] = self.fusion.value
        doc["head_hidden"] = list(self.head_hidden)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        return cls(**doc)


def wide_config(**overrides) -> ModelConfig:
    """Preset with a 512-wide encoder and 8 heads, making the fusion input 1024-D."""
    encoder = EncoderConfig(d_model=512, num_heads=8)
    return ModelConfig(encoder=encoder, **overrides)


class PredictionHead(nn.Module):
    """Three fully connected layers (hidden 512 and 256 by default) with dropout."""

    def __init__(self, in_dim: int, hidden: tuple[int, int], out_dim: int, dropout: float):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(in_dim, hidden[0]),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden[0], hidden[1]),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden[1], out_dim),
        )
        zero_init_biases(self)

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


@dataclass
class ForwardOutput:
    """One unimodal pass: prediction, pooled shared embedding, pooled raw input,
    and (when reconstruction is on) the reconstructed pooled input."""

    pred: Tensor
    pooled_shared: Tensor
    pooled_input: Tensor
    recon: Optional[Tensor]


def pool_mean(x: Tensor, mask: Tensor) -> Tensor:
    """Mean over valid frames only; (B, T, D) -> (B, D)."""
    counts = mask.sum(dim=1)
    if (counts == 0).any():
        raise ValueError("pool_mean needs at least one valid frame per sequence")
    m = mask[:, :, None].to(x.dtype)
    return (x * m).sum(dim=1) / counts[:, None].to(x.dtype)


class AVEmotionModel(nn.Module):
    """Audio-visual emotion model with modality branches and a shared encoder."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        enc = config.encoder
        self.acoustic_frontend = FrontendProjection(config.acoustic_dim, enc.d_model, config.frontend_kernel)
        self.visual_frontend = FrontendProjection(config.visual_dim, enc.d_model, config.frontend_kernel)
        self.acoustic_encoder = ConformerEncoder(enc, enc.layers_acoustic)
        self.visual_encoder = ConformerEncoder(enc, enc.layers_visual)
        self.shared_encoder = ConformerEncoder(enc, enc.layers_shared)
        self.acoustic_head = PredictionHead(enc.d_model, config.head_hidden, config.out_dim, config.head_dropout)
        self.visual_head = PredictionHead(enc.d_model, config.head_hidden, config.out_dim, config.head_dropout)
        if config.use_reconstruction:
            self.acoustic_recon = PredictionHead(enc.d_model, config.head_hidden, config.acoustic_dim, config.head_dropout)
            self.visual_recon = PredictionHead(enc.d_model, config.head_hidden, config.visual_dim, config.head_dropout)
        if config.fusion is FusionMode.AV_HEAD:
            self.fusion_head = PredictionHead(2 * enc.d_model, config.head_hidden, config.out_dim, config.head_dropout)
        self._groups: Optional[dict[str, ParameterGroup]] = None

    # -- parameter groups ---------------------------------------------------

    _GROUP_PREFIXES = {
        GROUP_ACOUSTIC: ("acoustic_frontend.", "acoustic_encoder.", "acoustic_head.", "acoustic_recon."),
        GROUP_VISUAL: ("visual_frontend.", "visual_encoder.", "visual_head.", "visual_recon."),
        GROUP_SHARED: ("shared_encoder.",),
        GROUP_FUSION: ("fusion_head.",),
    }

    def parameter_groups(self) -> dict[str, ParameterGroup]:
        if self._groups is None:
            members: dict[str, dict[str, nn.Parameter]] = {g: {} for g in self._GROUP_PREFIXES}
            for name, p in self.named_parameters():
                for group, prefixes in self._GROUP_PREFIXES.items():
                    if name.startswith(prefixes):
                        members[group][name] = p
                        break
                else:
                    raise ValueError(f"parameter {name} belongs to no group")
            self._groups = {
                g: ParameterGroup(g, params) for g, params in members.items() if params
            }
            check_partition(self._groups, self)
        return self._groups

    # -- forward paths ------------------------------------------------------

    def _branch(self, modality: Modality):
        if modality is Modality.ACOUSTIC:
            return self.acoustic_frontend, self.acoustic_encoder, self.acoustic_head, getattr(self, "acoustic_recon", None)
        return self.visual_frontend, self.visual_encoder, self.visual_head, getattr(self, "visual_recon", None)

    def shared_embedding(self, frames: Tensor, lengths: Tensor, modality: Modality) -> Tensor:
        """Pooled output of the shared stack (with the branch residual when enabled)."""
        frontend, encoder, _, _ = self._branch(modality)
        mask = lengths_to_mask(lengths, frames.shape[1])
        u = frontend(frames, mask)
        u = add_positions(u, mask)
        u = encoder(u, mask)
        s = self.shared_encoder(u, mask)
        r = s + u if self.config.use_residual else s
        return pool_mean(r, mask)

    def forward_unimodal(self, frames: Tensor, lengths: Tensor, modality: Modality) -> ForwardOutput:
        _, _, head, recon_head = self._branch(modality)
        mask = lengths_to_mask(lengths, frames.shape[1])
        pooled_shared = self.shared_embedding(frames, lengths, modality)
        pred = head(pooled_shared)
        pooled_input = pool_mean(frames, mask)
        recon = recon_head(pooled_shared) if recon_head is not None and self.config.use_reconstruction else None
        return ForwardOutput(pred=pred, pooled_shared=pooled_shared, pooled_input=pooled_input, recon=recon)

    def forward_audiovisual(
        self,
        audio: Tensor,
        audio_lengths: Tensor,
        video: Tensor,
        video_lengths: Tensor,
        return_embeddings: bool = False,
    ):
        """Fusion-head prediction from the concatenated pooled shared embeddings."""
        if self.config.fusion is not FusionMode.AV_HEAD:
            raise ValueError("forward_audiovisual requires the av_head fusion mode")
        pooled_a = self.shared_embedding(audio, audio_lengths, Modality.ACOUSTIC)
        pooled_v = self.shared_embedding(video, video_lengths, Modality.VISUAL)
        fused = torch.cat([pooled_a, pooled_v], dim=1)
        pred = self.fusion_head(fused)
        if return_embeddings:
            return pred, fused
        return pred


def average_fusion(pred_a: Tensor, pred_v: Tensor, task: Task) -> Tensor:
    """Average the two unimodal predictions: softmax probabilities for
    classification, raw attribute vectors for regression."""
    if pred_a.shape != pred_v.shape:
        raise ValueError(f"prediction shapes differ: {tuple(pred_a.shape)} vs {tuple(pred_v.shape)}")
    if task is Task.CLASSIFICATION:
        return 0.5 * (torch.softmax(pred_a, dim=-1) + torch.softmax(pred_v, dim=-1))
    return 0.5 * (pred_a + pred_v)


# ---------------------------------------------------------------------------
# Inference routing
# ---------------------------------------------------------------------------

def _effective_condition(sample: Sample, forced: Optional[Condition]) -> Condition:
    has_audio = sample.audio is not None
    has_video = sample.video is not None
    if forced is Condition.AUDIO_VISUAL and not (has_audio and has_video):
        raise ConditionUnavailableError(f"sample {sample.id!r} lacks a modality for the audio-visual condition")
    if forced is Condition.ACOUSTIC and not has_audio:
        raise ConditionUnavailableError(f"sample {sample.id!r} has no audio")
    if forced is Condition.VISUAL and not has_video:
        raise ConditionUnavailableError(f"sample {sample.id!r} has no video")
    if forced is not None:
        return forced
    if has_audio and has_video:
        return Condition.AUDIO_VISUAL
    return Condition.ACOUSTIC if has_audio else Condition.VISUAL


@torch.no_grad()
def predict_samples(
    model: AVEmotionModel,
    samples: Sequence[Sample],
    forced: Optional[Condition] = None,
    batch_size: int = 64,
) -> tuple[np.ndarray, list[Condition]]:
    """Batched routed inference; returns per-sample predictions and the condition used.

    Forcing a condition masks the other modality, so a paired sample under the
    acoustic condition computes exactly the audio-only forward.
    """
    was_training = model.training
    model.eval()
    try:
        conditions = [_effective_condition(s, forced) for s in samples]
        preds = np.zeros((len(samples), model.config.out_dim), dtype=np.float32)
        by_condition: dict[Condition, list[int]] = {}
        for i, c in enumerate(conditions):
            by_condition.setdefault(c, []).append(i)

        for condition, indices in by_condition.items():
            for start in range(0, len(indices), batch_size):
                chunk = indices[start : start + batch_size]
                members = [samples[i] for i in chunk]
                if condition is Condition.AUDIO_VISUAL:
                    audio, a_len = pad_sequences([s.audio.frames for s in members])
                    video, v_len = pad_sequences([s.video.frames for s in members])
                    if model.config.fusion is FusionMode.AV_HEAD:
                        out = model.forward_audiovisual(audio, a_len, video, v_len)
                    else:
                        pred_a = model.forward_unimodal(audio, a_len, Modality.ACOUSTIC).pred
                        pred_v = model.forward_unimodal(video, v_len, Modality.VISUAL).pred
                        out = average_fusion(pred_a, pred_v, model.config.task)
                elif condition is Condition.ACOUSTIC:
                    audio, a_len = pad_sequences([s.audio.frames for s in members])
                    out = model.forward_unimodal(audio, a_len, Modality.ACOUSTIC).pred
                else:
                    video, v_len = pad_sequences([s.video.frames for s in members])
                    out = model.forward_unimodal(video, v_len, Modality.VISUAL).pred
                preds[chunk] = out.cpu().numpy()
        return preds, conditions
    finally:
        model.train(was_training)


def predict(model: AVEmotionModel, sample: Sample, forced: Optional[Condition] = None) -> tuple[np.ndarray, Condition]:
    """Route one sample through the appropriate path; returns (prediction, condition)."""
    preds, conditions = predict_samples(model, [sample], forced=forced)
    return preds[0], conditions[0]
