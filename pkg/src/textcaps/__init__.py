"""Adversarial capsule networks for binary text classification.

A numpy-backed library: a minimal reverse-mode autodiff tensor engine,
pluggable sequence encoders (CNN / GRU / BiGRU / LSTM / BiLSTM / hybrids),
a primary-capsule / compression / dynamic-routing classification head,
character-level adversarial augmentation, and a training/evaluation/sweep
toolkit with a command-line front end.
"""

__version__ = "0.1.0"

from .tensor import (
    Tensor,
    Parameter,
    Tape,
    apply_primitive,
    backward,
    grad_check,
)

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "apply_primitive",
    "backward",
    "grad_check",
    "__version__",
]
