"""Region-attention classification head with dual pooled feed-forward paths.

A small, dependency-light implementation on numpy: a reverse-mode autodiff
core, the attention/pooling head, augmentation, SGD training, metrics and a CLI.
"""

from rafanet.errors import (
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    ManifestError,
    NumericError,
    RafaError,
)
from rafanet.model import VARIANTS, ModelConfig, forward, init_params
from rafanet.tensor import Tensor
from rafanet.train import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "FormatError",
    "ManifestError",
    "ModelConfig",
    "NumericError",
    "RafaError",
    "Tensor",
    "TrainConfig",
    "VARIANTS",
    "forward",
    "init_params",
]
