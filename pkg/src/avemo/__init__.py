"""Audio-visual emotion recognition that trains and predicts with any mix of
modalities: paired audio-visual, audio-only, or video-only, for categorical
emotion classification and emotional-attribute regression."""

from .conformer import EncoderConfig
from .data import (
    Batch,
    DataError,
    Dataset,
    EmotionTarget,
    FeatureSequence,
    Modality,
    Presence,
    Sample,
    Split,
    SplitAssignment,
    Task,
    batch_iter,
    load_manifest,
    make_splits,
    read_feature_file,
    save_manifest,
    write_feature_file,
)
from .model import AVEmotionModel, Condition, FusionMode, ModelConfig, average_fusion, predict, wide_config
from .synth import SynthSpec, generate_synthetic
from .train import TrainConfig, TrainResult, infer, train, train_step

__version__ = "0.1.0"

__all__ = [
    "AVEmotionModel",
    "Batch",
    "Condition",
    "DataError",
    "Dataset",
    "EmotionTarget",
    "EncoderConfig",
    "FeatureSequence",
    "FusionMode",
    "Modality",
    "ModelConfig",
    "Presence",
    "Sample",
    "Split",
    "SplitAssignment",
    "SynthSpec",
    "Task",
    "TrainConfig",
    "TrainResult",
    "average_fusion",
    "batch_iter",
    "generate_synthetic",
    "infer",
    "load_manifest",
    "make_splits",
    "predict",
    "read_feature_file",
    "save_manifest",
    "train",
    "train_step",
    "wide_config",
    "write_feature_file",
    "__version__",
]
