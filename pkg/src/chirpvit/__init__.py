"""Synthetic chirp spectrograms and a ViT-with-LoRA regressor for their parameters."""

__version__ = "0.1.0"

from .errors import (ChirpVitError, CheckpointError, ConfigurationError, DataError,
                     DomainError, GenerationError, MetricError, NormalizationError,
                     NumericError, ShapeError, TrainingError)
from .synth import ChirpParams, SynthConfig, generate_dataset
from .data import NormalizationStats, TrainData, prepare_training_data
from .model import ModelConfig, ViTModel, load_checkpoint, save_checkpoint
from .train import TrainConfig, TrainReport, train
from .evaluate import EvalReport, evaluate, format_prediction_report, pearson_r

__all__ = [
    "ChirpVitError", "CheckpointError", "ConfigurationError", "DataError",
    "DomainError", "GenerationError", "MetricError", "NormalizationError",
    "NumericError", "ShapeError", "TrainingError",
    "ChirpParams", "SynthConfig", "generate_dataset",
    "NormalizationStats", "TrainData", "prepare_training_data",
    "ModelConfig", "ViTModel", "load_checkpoint", "save_checkpoint",
    "TrainConfig", "TrainReport", "train",
    "EvalReport", "evaluate", "format_prediction_report", "pearson_r",
    "__version__",
]
