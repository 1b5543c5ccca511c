"""Distance metric learning with learned class proxies."""

from .data import Dataset, SplitSpec, SynthConfig, generate_synthetic, load_csv, save_csv, split_zero_shot
from .embedding import EmbeddingModel, embed, embed_forward, embed_backward, init_model
from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateInputError,
    NumericError,
    ParseError,
    ProxyDMLError,
    ShapeError,
    UnknownLabelError,
    UsageError,
)
from .proxies import ProxySet, init_proxies, proxy_approx_error
from .trainer import ModelConfig, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ConfigError", "Dataset", "DegenerateInputError", "EmbeddingModel",
    "ModelConfig", "NumericError", "ParseError", "ProxyDMLError", "ProxySet", "ShapeError",
    "SplitSpec", "SynthConfig", "TrainConfig", "UnknownLabelError", "UsageError", "embed",
    "embed_backward", "embed_forward", "generate_synthetic", "init_model", "init_proxies",
    "load_csv", "proxy_approx_error", "save_csv", "split_zero_shot", "train",
]
