"""MIMO detection lab.

Flow-matching transformer detector with classical baselines (LMMSE, OAMP,
exhaustive ML), a Monte-Carlo BER/runtime harness, and a small numpy
autodiff core that everything trains on.
"""

__version__ = "0.1.0"

from .env import (
    ComplexSystem,
    RealSystem,
    SnrSpec,
    SymbolFrame,
    SystemConfig,
    real_decompose,
    sample_channel,
    sample_frame,
    transmit,
)
from .detectors import DetectionResult, OampConfig, lmmse, ml_exhaustive, oamp
from .flow import InferenceConfig, LossVariant, corrupt, euler_sample, flow_loss, logits_to_signal, velocity
from .model import ModelConfig, TransformerDetector
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "ComplexSystem",
    "DetectionResult",
    "InferenceConfig",
    "LossVariant",
    "ModelConfig",
    "OampConfig",
    "RealSystem",
    "SnrSpec",
    "SymbolFrame",
    "SystemConfig",
    "TrainConfig",
    "TransformerDetector",
    "corrupt",
    "euler_sample",
    "flow_loss",
    "lmmse",
    "load_checkpoint",
    "logits_to_signal",
    "ml_exhaustive",
    "oamp",
    "real_decompose",
    "sample_channel",
    "sample_frame",
    "save_checkpoint",
    "train",
    "transmit",
    "velocity",
]
