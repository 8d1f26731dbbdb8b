"""MSAAN: multi-scale spatial adaptive attention network for image super-resolution,
built on a small numpy tensor/autodiff core."""

from .model import ModelConfig, forward, init_weights, model_forward, param_count
from .optim import ParamStore, TrainConfig

__all__ = ["ModelConfig", "ParamStore", "TrainConfig", "forward", "init_weights",
           "model_forward", "param_count"]
__version__ = "0.1.0"
