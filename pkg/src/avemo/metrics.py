"""Evaluation: macro/micro F1, per-attribute CCC over a whole split, Welch's
two-tailed t-test across trials, and the shared-embedding cosine-distance analysis.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from scipy import special

from . import losses
from .data import Modality, Sample, Task, pad_sequences
from .model import AVEmotionModel, Condition, ConditionUnavailableError, predict_samples

logger = logging.getLogger(__name__)

ATTRIBUTE_NAMES = ("arousal", "valence", "dominance")


@dataclass
class F1Scores:
    macro: float
    micro: float


def f1_scores(preds: np.ndarray, labels: np.ndarray, num_classes: int) -> F1Scores:
    """Micro (global-count) and macro (per-class mean) F1.

    Classes that never occur in the reference labels are excluded from the macro
    mean; classes in the labels score 0 when never predicted correctly.
    """
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1 or preds.size < 1:
        raise ValueError("preds and labels must be equal-length non-empty 1-D arrays")
    for arr, name in ((preds, "preds"), (labels, "labels")):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise ValueError(f"{name} contain class indices outside [0, {num_classes})")

    per_class = []
    for c in range(num_classes):
        tp = int(np.sum((preds == c) & (labels == c)))
        fp = int(np.sum((preds == c) & (labels != c)))
        fn = int(np.sum((preds != c) & (labels == c)))
        if tp + fn == 0:  # class absent from the reference labels
            continue
        per_class.append(2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0)
    macro = float(np.mean(per_class))
    micro = float(np.mean(preds == labels))  # single-label micro-F1 reduces to accuracy
    return F1Scores(macro=macro, micro=micro)


def ccc_eval(preds: np.ndarray, targets: np.ndarray) -> tuple[float, float, float]:
    """Per-attribute CCC over a full evaluation split (not per batch)."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.ndim != 2 or preds.shape[1] != 3:
        raise ValueError(f"expected matching (N, 3) arrays, got {preds.shape} vs {targets.shape}")
    if preds.shape[0] < 2:
        raise ValueError("ccc_eval needs at least 2 samples")
    values = tuple(
        float(losses.ccc(torch.from_numpy(preds[:, k].copy()), torch.from_numpy(targets[:, k].copy())))
        for k in range(3)
    )
    return values


@dataclass
class TTestResult:
    p_value: float
    statistic: float
    dof: float
    degenerate: bool = False


def welch_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-tailed Welch t-test (unequal variances).

    When both samples are constant the test is degenerate: p=1 if the means agree,
    p=0 otherwise, flagged in the result.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("welch_t_test needs at least 2 values per side")
    var_a = a.var(ddof=1)
    var_b = b.var(ddof=1)
    if var_a == 0.0 and var_b == 0.0:
        equal = float(a.mean()) == float(b.mean())
        return TTestResult(p_value=1.0 if equal else 0.0, statistic=0.0 if equal else np.inf, dof=0.0, degenerate=True)
    se_a = var_a / a.size
    se_b = var_b / b.size
    statistic = (a.mean() - b.mean()) / np.sqrt(se_a + se_b)
    dof = (se_a + se_b) ** 2 / (
        (se_a**2 / (a.size - 1)) + (se_b**2 / (b.size - 1))
    )
    p_value = float(2.0 * special.stdtr(dof, -abs(statistic)))
    return TTestResult(p_value=p_value, statistic=float(statistic), dof=float(dof))


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cosine similarity; 0 for identical directions, 1 orthogonal, 2 antipodal."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    norm = np.linalg.norm(a) * np.linalg.norm(b)
    if norm == 0.0:
        raise ValueError("cosine distance undefined for zero-norm vectors")
    return float(1.0 - float(a @ b) / norm)


@dataclass
class EmbeddingReport:
    mean_distance: float
    distances: list[float]
    skipped: int = 0


@torch.no_grad()
def embedding_analysis(model: AVEmotionModel, samples: Sequence[Sample]) -> EmbeddingReport:
    """Mean cosine distance between the shared-layer embeddings of the acoustic-only
    and visual-only passes over paired samples. Zero-norm embeddings are skipped
    and counted."""
    paired = [s for s in samples if s.audio is not None and s.video is not None]
    if not paired:
        raise ConditionUnavailableError("embedding analysis needs paired samples")
    was_training = model.training
    model.eval()
    try:
        distances: list[float] = []
        skipped = 0
        for s in paired:
            audio, a_len = pad_sequences([s.audio.frames])
            video, v_len = pad_sequences([s.video.frames])
            emb_a = model.shared_embedding(audio, a_len, Modality.ACOUSTIC)[0].numpy()
            emb_v = model.shared_embedding(video, v_len, Modality.VISUAL)[0].numpy()
            try:
                distances.append(cosine_distance(emb_a, emb_v))
            except ValueError:
                skipped += 1
        if skipped:
            logger.warning("skipped %d samples with zero-norm shared embeddings", skipped)
        if not distances:
            raise ValueError("all embeddings had zero norm; no distances computed")
        return EmbeddingReport(mean_distance=float(np.mean(distances)), distances=distances, skipped=skipped)
    finally:
        model.train(was_training)


@dataclass
class MetricsReport:
    condition: Condition
    metrics: dict[str, float]
    num_samples: int
    trial: Optional[int] = None
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "condition": self.condition.value,
            "metrics": self.metrics,
            "num_samples": self.num_samples,
            "trial": self.trial,
            "seed": self.seed,
        }


def _supports(sample: Sample, condition: Condition) -> bool:
    if condition is Condition.AUDIO_VISUAL:
        return sample.audio is not None and sample.video is not None
    if condition is Condition.ACOUSTIC:
        return sample.audio is not None
    return sample.video is not None


def evaluate(
    model: AVEmotionModel,
    samples: Sequence[Sample],
    task: Task,
    num_classes: Optional[int],
    conditions: Sequence[Condition] = (Condition.AUDIO_VISUAL, Condition.ACOUSTIC, Condition.VISUAL),
) -> list[MetricsReport]:
    """Force each condition over the samples that support it and compute the task
    metrics. A condition supported by no sample at all is an error."""
    reports = []
    for condition in conditions:
        eligible = [s for s in samples if _supports(s, condition)]
        if not eligible:
            raise ConditionUnavailableError(f"condition unavailable: no sample supports {condition.value}")
        preds, _ = predict_samples(model, eligible, forced=condition)
        if task is Task.CLASSIFICATION:
            labels = np.array([s.target.class_index for s in eligible])
            scores = f1_scores(preds.argmax(axis=1), labels, num_classes)
            values = {"macro_f1": scores.macro, "micro_f1": scores.micro}
        else:
            targets = np.array([s.target.attributes for s in eligible], dtype=np.float64)
            per_attr = ccc_eval(preds.astype(np.float64), targets)
            values = {f"ccc_{name}": v for name, v in zip(ATTRIBUTE_NAMES, per_attr)}
            values["mean_ccc"] = float(np.mean(per_attr))
        reports.append(MetricsReport(condition=condition, metrics=values, num_samples=len(eligible)))
    return reports
