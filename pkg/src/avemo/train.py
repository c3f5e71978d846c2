"""Training loop: per-batch modality-conditional updates, the freeze-then-train
protocol for the fusion head, epoch-level dev selection, and inference routing.

Each batch runs up to three sub-steps in order: an acoustic pass updating the
acoustic + shared groups, a visual pass updating the visual + shared groups, and
(for paired batches with the fusion head) an audio-visual pass that freezes
everything else, recomputes the forward with the just-updated weights, and
updates only the fusion head on the prediction loss.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from . import metrics
from .data import Batch, Dataset, Modality, Sample, Split, SplitAssignment, Task, batch_iter
from .losses import LossValue, cross_entropy, ccc_loss, recon_mse, total_loss
from .model import AVEmotionModel, Condition, FusionMode, ModelConfig, predict_samples
from .optim import (
    GROUP_ACOUSTIC,
    GROUP_FUSION,
    GROUP_SHARED,
    GROUP_VISUAL,
    AdamState,
    NonFiniteLossError,
    ParameterGroup,
    adam_update,
    backward,
)

logger = logging.getLogger(__name__)

SELECT_AUTO = "auto"
SELECT_MACRO_F1 = "macro_f1"
SELECT_MEAN_CCC = "mean_ccc"


@dataclass
class TrainConfig:
    epochs: int = 20
    lr: float = 5e-5
    batch_size: int = 32
    seed: int = 0
    alpha: Optional[float] = None  # None: use the model config's reconstruction weight
    selection_metric: str = SELECT_AUTO
    selection_condition: str = "audio_visual"  # or "best_available"
    regression_loss: str = "one_minus_ccc"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.selection_metric not in (SELECT_AUTO, SELECT_MACRO_F1, SELECT_MEAN_CCC):
            raise ValueError(f"unknown selection metric {self.selection_metric!r}")
        if self.selection_condition not in ("audio_visual", "best_available"):
            raise ValueError(f"unknown selection condition {self.selection_condition!r}")


@dataclass
class StepReport:
    acoustic: Optional[LossValue] = None
    visual: Optional[LossValue] = None
    av_pred_loss: Optional[float] = None


@dataclass
class EpochRecord:
    epoch: int
    loss_acoustic: Optional[float]
    loss_visual: Optional[float]
    loss_av: Optional[float]
    dev_metric: float
    dev_detail: dict
    selected: bool = False


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    selected_epoch: int = -1


@dataclass
class TrainResult:
    model: AVEmotionModel
    history: TrainHistory
    optimizers: dict[str, AdamState]
    av_steps: int


def _prediction_loss(pred: torch.Tensor, batch: Batch, task: Task, regression_form: str) -> torch.Tensor:
    if task is Task.CLASSIFICATION:
        return cross_entropy(pred, batch.class_targets())
    return ccc_loss(pred, batch.attribute_targets(), form=regression_form)


def train_step(
    model: AVEmotionModel,
    batch: Batch,
    groups: dict[str, ParameterGroup],
    optimizers: dict[str, AdamState],
    config: TrainConfig,
    audit: Optional[Callable[[str, AVEmotionModel], None]] = None,
) -> StepReport:
    """Run the modality-conditional update sequence on one presence-homogeneous batch.

    ``audit``, when given, is called with ("acoustic" | "visual" | "fusion", model)
    after each sub-step, before any further parameters move.
    """
    task = model.config.task
    alpha = model.config.alpha if config.alpha is None else config.alpha
    report = StepReport()

    if batch.audio is not None:
        out = model.forward_unimodal(batch.audio, batch.audio_lengths, Modality.ACOUSTIC)
        pred_term = _prediction_loss(out.pred, batch, task, config.regression_loss)
        recon_term = recon_mse(out.pooled_input, out.recon) if out.recon is not None else 0.0
        loss = total_loss(pred_term, recon_term, alpha)
        grads = backward(loss.total, [groups[GROUP_ACOUSTIC], groups[GROUP_SHARED]])
        adam_update(groups[GROUP_ACOUSTIC], grads, optimizers[GROUP_ACOUSTIC])
        adam_update(groups[GROUP_SHARED], grads, optimizers[GROUP_SHARED])
        report.acoustic = loss.detach()
        if audit:
            audit("acoustic", model)

    if batch.video is not None:
        out = model.forward_unimodal(batch.video, batch.video_lengths, Modality.VISUAL)
        pred_term = _prediction_loss(out.pred, batch, task, config.regression_loss)
        recon_term = recon_mse(out.pooled_input, out.recon) if out.recon is not None else 0.0
        loss = total_loss(pred_term, recon_term, alpha)
        grads = backward(loss.total, [groups[GROUP_VISUAL], groups[GROUP_SHARED]])
        adam_update(groups[GROUP_VISUAL], grads, optimizers[GROUP_VISUAL])
        adam_update(groups[GROUP_SHARED], grads, optimizers[GROUP_SHARED])
        report.visual = loss.detach()
        if audit:
            audit("visual", model)

    if batch.audio is not None and batch.video is not None and model.config.fusion is FusionMode.AV_HEAD:
        for name in (GROUP_ACOUSTIC, GROUP_VISUAL, GROUP_SHARED):
            groups[name].freeze()
        try:
            pred = model.forward_audiovisual(batch.audio, batch.audio_lengths, batch.video, batch.video_lengths)
            loss = _prediction_loss(pred, batch, task, config.regression_loss)
            grads = backward(loss, [groups[GROUP_FUSION]])
            adam_update(groups[GROUP_FUSION], grads, optimizers[GROUP_FUSION])
            report.av_pred_loss = float(loss.detach())
        finally:
            for name in (GROUP_ACOUSTIC, GROUP_VISUAL, GROUP_SHARED):
                groups[name].unfreeze()
        if audit:
            audit("fusion", model)

    return report


def _dev_samples_and_condition(
    dev: Sequence[Sample], config: TrainConfig
) -> tuple[Sequence[Sample], Optional[Condition]]:
    if config.selection_condition == "audio_visual":
        paired = [s for s in dev if s.audio is not None and s.video is not None]
        if paired:
            return paired, Condition.AUDIO_VISUAL
        logger.warning("no paired dev samples; selecting on the best available condition instead")
    return dev, None


def evaluate_selection_metric(
    model: AVEmotionModel, dev: Sequence[Sample], config: TrainConfig
) -> tuple[float, dict]:
    """Dev metric used for epoch selection: macro-F1 for classification, mean CCC
    for regression, in the audio-visual condition when paired dev data exists."""
    samples, forced = _dev_samples_and_condition(dev, config)
    preds, _ = predict_samples(model, samples, forced=forced)
    metric_name = config.selection_metric
    if metric_name == SELECT_AUTO:
        metric_name = SELECT_MACRO_F1 if model.config.task is Task.CLASSIFICATION else SELECT_MEAN_CCC

    detail: dict = {
        "metric": metric_name,
        "condition": forced.value if forced is not None else "best_available",
        "num_samples": len(samples),
    }
    if metric_name == SELECT_MACRO_F1:
        labels = np.array([s.target.class_index for s in samples])
        scores = metrics.f1_scores(preds.argmax(axis=1), labels, model.config.num_classes)
        detail.update({"macro_f1": scores.macro, "micro_f1": scores.micro})
        return scores.macro, detail
    targets = np.array([s.target.attributes for s in samples], dtype=np.float64)
    per_attr = metrics.ccc_eval(preds.astype(np.float64), targets)
    mean_ccc = float(np.mean(per_attr))
    detail.update({"ccc": list(per_attr), "mean_ccc": mean_ccc})
    return mean_ccc, detail


def train(
    dataset: Dataset,
    splits: SplitAssignment,
    model_config: ModelConfig,
    config: TrainConfig,
    log_path: Optional[str | Path] = None,
) -> TrainResult:
    """Train for ``config.epochs`` epochs and return the model restored to the best
    dev epoch. Fully deterministic given the seed (init, batch order, dropout)."""
    train_ids = splits.ids(Split.TRAIN)
    dev_ids = splits.ids(Split.DEV)
    if not train_ids or not dev_ids:
        raise ValueError("train and dev splits must be non-empty")
    dev_samples = dataset.subset(dev_ids)
    if dataset.task is Task.REGRESSION and len(dev_samples) < 2:
        raise ValueError("regression needs at least 2 dev samples for CCC")

    torch.manual_seed(config.seed)
    model = AVEmotionModel(model_config)
    groups = model.parameter_groups()
    optimizers = {name: AdamState.for_group(group, lr=config.lr) for name, group in groups.items()}

    history = TrainHistory()
    best_metric = -float("inf")
    best_state: Optional[dict] = None
    skipped_singletons = 0

    for epoch in range(config.epochs):
        sums = {"a": 0.0, "v": 0.0, "av": 0.0}
        counts = {"a": 0, "v": 0, "av": 0}
        for batch in batch_iter(dataset, train_ids, config.batch_size, seed=config.seed, epoch=epoch):
            if dataset.task is Task.REGRESSION and len(batch) < 2:
                skipped_singletons += 1
                logger.warning("dropping size-1 regression batch (CCC undefined for N=1)")
                continue
            try:
                report = train_step(model, batch, groups, optimizers, config)
            except (NonFiniteLossError, FloatingPointError) as exc:
                raise NonFiniteLossError(f"divergence at epoch {epoch}: {exc}") from exc
            n = len(batch)
            if report.acoustic is not None:
                sums["a"] += report.acoustic.total * n
                counts["a"] += n
            if report.visual is not None:
                sums["v"] += report.visual.total * n
                counts["v"] += n
            if report.av_pred_loss is not None:
                sums["av"] += report.av_pred_loss * n
                counts["av"] += n

        dev_metric, dev_detail = evaluate_selection_metric(model, dev_samples, config)
        record = EpochRecord(
            epoch=epoch,
            loss_acoustic=sums["a"] / counts["a"] if counts["a"] else None,
            loss_visual=sums["v"] / counts["v"] if counts["v"] else None,
            loss_av=sums["av"] / counts["av"] if counts["av"] else None,
            dev_metric=dev_metric,
            dev_detail=dev_detail,
        )
        history.epochs.append(record)
        if dev_metric > best_metric:
            best_metric = dev_metric
            history.selected_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    history.epochs[history.selected_epoch].selected = True
    if best_state is not None:
        model.load_state_dict(best_state)

    av_steps = optimizers[GROUP_FUSION].t if GROUP_FUSION in optimizers else 0
    if GROUP_FUSION in groups and av_steps == 0:
        logger.warning("fusion head received no updates (no paired training batches); "
                       "audio-visual inference will use its untrained initialization")
    if skipped_singletons:
        logger.warning("dropped %d size-1 regression batches in total", skipped_singletons)

    if log_path is not None:
        _write_train_log(Path(log_path), history)
    return TrainResult(model=model, history=history, optimizers=optimizers, av_steps=av_steps)


def _write_train_log(path: Path, history: TrainHistory) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in history.epochs:
            fh.write(
                json.dumps(
                    {
                        "epoch": rec.epoch,
                        "losses": {"a": rec.loss_acoustic, "v": rec.loss_visual, "av": rec.loss_av},
                        "dev_metrics": {"selection": rec.dev_metric, **rec.dev_detail},
                        "selected": rec.selected,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def infer(
    model: AVEmotionModel,
    samples: Sequence[Sample],
    forced: Optional[Condition] = None,
    av_trained: Optional[bool] = None,
) -> tuple[np.ndarray, list[Condition]]:
    """Routed inference over samples; forcing a condition masks the other modality.

    Pass ``av_trained=False`` (e.g. from checkpoint metadata) to get a warning when
    the audio-visual path would rely on an untrained fusion head.
    """
    preds, conditions = predict_samples(model, samples, forced=forced)
    if (
        av_trained is False
        and model.config.fusion is FusionMode.AV_HEAD
        and any(c is Condition.AUDIO_VISUAL for c in conditions)
    ):
        logger.warning("audio-visual condition unavailable in spirit: fusion head is untrained")
    return preds, conditions
