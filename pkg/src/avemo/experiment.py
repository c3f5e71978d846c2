"""Experiment runner: the multi-trial train/evaluate protocol, ablation switches,
report emission, and cross-experiment significance comparison.

Every artifact this module writes is deterministic for a fixed config and seed:
JSON is emitted with sorted keys and no timestamps, and checkpoints use the
fixed-timestamp archive writer.
"""

from __future__ import annotations

import json
import logging
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import save_checkpoint
from .data import Dataset, Split, load_manifest, make_splits
from .metrics import embedding_analysis, welch_t_test
from .model import Condition, FusionMode, ModelConfig
from .synth import SynthSpec, generate_synthetic
from .train import TrainConfig, train
from . import metrics

logger = logging.getLogger(__name__)

ABLATION_NONE = "none"
ABLATION_NO_RESIDUAL = "no-residual"
ABLATION_NO_RECON = "no-recon"
ABLATION_AVG_FUSION = "avg-fusion"
ABLATIONS = (ABLATION_NONE, ABLATION_NO_RESIDUAL, ABLATION_NO_RECON, ABLATION_AVG_FUSION)

CONDITION_CODES = {"av": Condition.AUDIO_VISUAL, "a": Condition.ACOUSTIC, "v": Condition.VISUAL}
SIGNIFICANCE_LEVEL = 0.05


def condition_from_code(code: str) -> Condition:
    try:
        return CONDITION_CODES[code.lower()]
    except KeyError:
        raise ValueError(f"unknown condition code {code!r}; use av, a, or v") from None


def apply_ablation(config: ModelConfig, ablation: str) -> ModelConfig:
    """Map an ablation switch onto the model config."""
    doc = config.to_dict()
    if ablation == ABLATION_NONE:
        pass
    elif ablation == ABLATION_NO_RESIDUAL:
        doc["use_residual"] = False
    elif ablation == ABLATION_NO_RECON:
        doc["use_reconstruction"] = False
    elif ablation == ABLATION_AVG_FUSION:
        doc["fusion"] = FusionMode.AVERAGE.value
    else:
        raise ValueError(f"unknown ablation {ablation!r}; choose from {ABLATIONS}")
    return ModelConfig.from_dict(doc)


@dataclass
class ExperimentConfig:
    """One reproducible experiment: data source, model, training, trial protocol."""

    manifest: Optional[str] = None
    synth: Optional[SynthSpec] = None
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    trials: int = 5
    ablation: str = ABLATION_NONE
    base_seed: int = 0
    split_ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
    conditions: Optional[list[str]] = None  # condition codes; None = every feasible one

    def __post_init__(self):
        if (self.manifest is None) == (self.synth is None):
            raise ValueError("config needs exactly one data source: 'manifest' or 'synth'")
        if isinstance(self.synth, dict):
            self.synth = SynthSpec(**self.synth)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        self.split_ratios = tuple(self.split_ratios)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        doc = json.loads(Path(path).read_text())
        return cls(**doc)

    def to_dict(self) -> dict:
        from dataclasses import asdict

        doc = {
            "manifest": self.manifest,
            "synth": None if self.synth is None else {**asdict(self.synth), "task": self.synth.task.value},
            "model": self.model,
            "train": self.train,
            "trials": self.trials,
            "ablation": self.ablation,
            "base_seed": self.base_seed,
            "split_ratios": list(self.split_ratios),
            "conditions": self.conditions,
        }
        return doc


def _dataset_dims(dataset: Dataset) -> tuple[Optional[int], Optional[int]]:
    da = dv = None
    for s in dataset.samples:
        if da is None and s.audio is not None:
            da = s.audio.dim
        if dv is None and s.video is not None:
            dv = s.video.dim
        if da is not None and dv is not None:
            break
    return da, dv


def load_dataset(config: ExperimentConfig) -> Dataset:
    if config.manifest is not None:
        return load_manifest(config.manifest)
    return generate_synthetic(config.synth, seed=config.base_seed)


def resolve_model_config(config: ExperimentConfig, dataset: Dataset) -> ModelConfig:
    """Fill task/classes/dims from the dataset, apply user overrides, then ablation."""
    da, dv = _dataset_dims(dataset)
    doc = {"task": dataset.task.value}
    if dataset.num_classes is not None:
        doc["num_classes"] = dataset.num_classes
    if da is not None:
        doc["acoustic_dim"] = da
    if dv is not None:
        doc["visual_dim"] = dv
    doc.update(config.model)
    return apply_ablation(ModelConfig.from_dict(doc), config.ablation)


def _feasible_conditions(dataset: Dataset, ids: list[str]) -> list[Condition]:
    samples = dataset.subset(ids)
    out = []
    for condition in (Condition.AUDIO_VISUAL, Condition.ACOUSTIC, Condition.VISUAL):
        if any(metrics._supports(s, condition) for s in samples):
            out.append(condition)
    return out


def _dump_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def run_trial(
    dataset: Dataset,
    model_config: ModelConfig,
    config: ExperimentConfig,
    trial: int,
    trial_dir: Path,
) -> dict:
    seed = config.base_seed + trial
    splits = make_splits(dataset, ratios=config.split_ratios, seed=seed)
    train_cfg = TrainConfig(**{**config.train, "seed": seed})
    result = train(dataset, splits, model_config, train_cfg, log_path=trial_dir / "train_log.jsonl")

    save_checkpoint(
        trial_dir / "model.ckpt",
        result.model,
        meta={"trial": trial, "seed": seed, "av_steps": result.av_steps,
              "selected_epoch": result.history.selected_epoch},
    )

    test_ids = splits.ids(Split.TEST)
    test_samples = dataset.subset(test_ids)
    if config.conditions is not None:
        conditions = [condition_from_code(c) for c in config.conditions]
    else:
        conditions = _feasible_conditions(dataset, test_ids)
    reports = metrics.evaluate(result.model, test_samples, dataset.task, dataset.num_classes, conditions)

    report_doc: dict = {
        "trial": trial,
        "seed": seed,
        "selected_epoch": result.history.selected_epoch,
        "conditions": {r.condition.value: {"metrics": r.metrics, "num_samples": r.num_samples} for r in reports},
    }
    if any(s.audio is not None and s.video is not None for s in test_samples):
        emb = embedding_analysis(result.model, test_samples)
        report_doc["embedding_mean_cosine_distance"] = emb.mean_distance
        report_doc["embedding_skipped"] = emb.skipped
    _dump_json(trial_dir / "report.json", report_doc)
    return report_doc


def run_experiment(config: ExperimentConfig, out_dir: str | Path) -> Path:
    """Run the trial protocol: re-split and re-train per trial, evaluate every
    feasible condition on test, and emit per-trial reports plus the aggregate
    table. A failed trial is recorded and the remaining trials continue."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(config)
    model_config = resolve_model_config(config, dataset)
    _dump_json(out_dir / "experiment.json", {"config": config.to_dict(), "model": model_config.to_dict()})

    failures = []
    trial_docs = []
    for trial in range(config.trials):
        trial_dir = out_dir / f"trial_{trial:02d}"
        try:
            trial_docs.append(run_trial(dataset, model_config, config, trial, trial_dir))
        except Exception as exc:
            logger.error("trial %d failed: %s", trial, exc)
            failures.append({"trial": trial, "error": type(exc).__name__, "message": str(exc)})
            logger.debug("%s", traceback.format_exc())
    _dump_json(out_dir / "run_log.json", {"trials": config.trials, "failures": failures})
    if trial_docs:
        aggregate = aggregate_reports(trial_docs)
        _dump_json(out_dir / "aggregate.json", aggregate)
        (out_dir / "table.txt").write_text(format_table(aggregate))
        (out_dir / "table.csv").write_text(format_csv(aggregate))
    return out_dir


def aggregate_reports(trial_docs: list[dict]) -> dict:
    """Mean (and std) of every metric per condition across trials."""
    values: dict[str, dict[str, list[float]]] = {}
    for doc in trial_docs:
        for condition, payload in doc["conditions"].items():
            for metric, value in payload["metrics"].items():
                values.setdefault(condition, {}).setdefault(metric, []).append(value)
    conditions = {}
    for condition, metric_map in values.items():
        conditions[condition] = {
            metric: {"mean": float(np.mean(vals)), "std": float(np.std(vals)), "trials": len(vals)}
            for metric, vals in metric_map.items()
        }
    out = {"trials": len(trial_docs), "conditions": conditions}
    distances = [d["embedding_mean_cosine_distance"] for d in trial_docs if "embedding_mean_cosine_distance" in d]
    if distances:
        out["embedding_mean_cosine_distance"] = {"mean": float(np.mean(distances)), "trials": len(distances)}
    return out


_CONDITION_ORDER = ("audio_visual", "acoustic", "visual")


def _ordered_conditions(conditions: dict) -> list[str]:
    return [c for c in _CONDITION_ORDER if c in conditions] + sorted(set(conditions) - set(_CONDITION_ORDER))


def format_table(aggregate: dict) -> str:
    """Fixed-width text matrix: one row per condition, metric means as columns."""
    conditions = aggregate["conditions"]
    order = _ordered_conditions(conditions)
    metric_names = sorted({m for cond in conditions.values() for m in cond})
    header = ["condition"] + metric_names
    rows = [header]
    for condition in order:
        row = [condition]
        for metric in metric_names:
            cell = conditions[condition].get(metric)
            row.append("----" if cell is None else f"{cell['mean']:.4f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.append(f"(mean over {aggregate['trials']} trials)")
    if "embedding_mean_cosine_distance" in aggregate:
        lines.append(f"embedding mean cosine distance: {aggregate['embedding_mean_cosine_distance']['mean']:.4f}")
    return "\n".join(lines) + "\n"


def format_csv(aggregate: dict) -> str:
    lines = ["condition,metric,mean,std,trials"]
    for condition in _ordered_conditions(aggregate["conditions"]):
        for metric, cell in sorted(aggregate["conditions"][condition].items()):
            lines.append(f"{condition},{metric},{cell['mean']:.6f},{cell['std']:.6f},{cell['trials']}")
    return "\n".join(lines) + "\n"


def load_trial_reports(exp_dir: str | Path) -> list[dict]:
    exp_dir = Path(exp_dir)
    docs = []
    for path in sorted(exp_dir.glob("trial_*/report.json")):
        docs.append(json.loads(path.read_text()))
    if not docs:
        raise FileNotFoundError(f"no trial reports under {exp_dir}")
    return docs


def compare(dir_a: str | Path, dir_b: str | Path, metric: str) -> dict:
    """Per-condition Welch p-values between two experiment directories."""
    docs_a = load_trial_reports(dir_a)
    docs_b = load_trial_reports(dir_b)

    def collect(docs):
        table: dict[str, list[float]] = {}
        for doc in docs:
            for condition, payload in doc["conditions"].items():
                if metric in payload["metrics"]:
                    table.setdefault(condition, []).append(payload["metrics"][metric])
        return table

    table_a = collect(docs_a)
    table_b = collect(docs_b)
    shared = sorted(set(table_a) & set(table_b))
    if not shared:
        raise ValueError(f"metric {metric!r} absent from one or both experiments")
    out = {"metric": metric, "conditions": {}}
    for condition in shared:
        a, b = table_a[condition], table_b[condition]
        if len(a) < 2 or len(b) < 2:
            raise ValueError(f"need >= 2 trials per side for {condition}, got {len(a)} and {len(b)}")
        result = welch_t_test(a, b)
        out["conditions"][condition] = {
            "p_value": result.p_value,
            "significant": bool(result.p_value < SIGNIFICANCE_LEVEL),
            "mean_a": float(np.mean(a)),
            "mean_b": float(np.mean(b)),
            "degenerate": result.degenerate,
        }
    return out
