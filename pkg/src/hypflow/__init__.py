"""Normalizing flows on the Lorentz model of hyperbolic space."""

from . import diffnet, flows, lorentz, targets, training, wrapped_normal
from .errors import DimensionError, DomainError, HypflowError, NumericError, TapeStateError
from .flows import FlowStack, stack_forward, stack_inverse, stack_log_prob, stack_sample
from .targets import TargetSpec, make_target, sample_dataset
from .training import TrainConfig, TrainReport, evaluate, train
from .wrapped_normal import WrappedNormal

__version__ = "0.1.0"

__all__ = [
    "DimensionError", "DomainError", "FlowStack", "HypflowError", "NumericError",
    "TapeStateError", "TargetSpec", "TrainConfig", "TrainReport", "WrappedNormal",
    "diffnet", "evaluate", "flows", "lorentz", "make_target", "sample_dataset",
    "stack_forward", "stack_inverse", "stack_log_prob", "stack_sample", "targets",
    "train", "training", "wrapped_normal",
]
