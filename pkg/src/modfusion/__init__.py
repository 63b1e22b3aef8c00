"""Linguistic + acoustic sequence classification with modulated Transformers."""

from .config import MelConfig, ModelConfig, RunConfig
from .fusion import Batch, MultimodalModel, forward
from .tensor import Tensor, backward, finite_difference_grad

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "MelConfig",
    "ModelConfig",
    "MultimodalModel",
    "RunConfig",
    "Tensor",
    "backward",
    "finite_difference_grad",
    "forward",
]
