"""Cloze-style readers with bilinear, dot-product and sequential attention."""

from .attention import AttentionTrace, ScoringVariant
from .data import ClozeExample, SyntheticTaskSpec, Vocabulary
from .reader import VARIANTS, ReaderConfig, ReaderModel, build_model, count_parameters
from .tensor import Tape, Tensor, backward, grad_check, no_grad
from .training import TrainConfig, evaluate_accuracy, train

__version__ = "0.1.0"

__all__ = [
    "AttentionTrace",
    "ClozeExample",
    "ReaderConfig",
    "ReaderModel",
    "ScoringVariant",
    "SyntheticTaskSpec",
    "Tape",
    "Tensor",
    "TrainConfig",
    "VARIANTS",
    "Vocabulary",
    "backward",
    "build_model",
    "count_parameters",
    "evaluate_accuracy",
    "grad_check",
    "no_grad",
    "train",
]
