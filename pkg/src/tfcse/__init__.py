"""Time-frequency-channel squeeze-and-excitation CRNN for multi-channel
polyphonic sound event detection."""

from .attention import SeConfig, make_se_block, se_param_count
from .audio_io import MultichannelAudio
from .estimator import SedCrnn
from .features import SpectrogramFeatures, extract_features
from .metrics import EventRoll, evaluate, joint_score
from .model import (
    CrnnConfig,
    SedModel,
    build_model,
    count_parameters,
    load_checkpoint,
    predict_events,
    save_checkpoint,
)
from .tensor import DiffNode

__version__ = "0.1.0"

__all__ = [
    "CrnnConfig",
    "DiffNode",
    "EventRoll",
    "MultichannelAudio",
    "SeConfig",
    "SedCrnn",
    "SedModel",
    "SpectrogramFeatures",
    "build_model",
    "count_parameters",
    "evaluate",
    "extract_features",
    "joint_score",
    "load_checkpoint",
    "make_se_block",
    "predict_events",
    "save_checkpoint",
    "se_param_count",
]
