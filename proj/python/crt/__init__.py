"""Coded residual transform metric learning on synthetic part-based data."""

from ._core import (
    Config,
    ConfigError,
    DegenerateError,
    Error,
    IoError,
    Model,
    NumericalError,
    ShapeError,
    consistency_loss,
    correlation_map,
    diversity_loss,
    embedding_space_density,
    encode_residuals,
    evaluate,
    generate_dataset,
    grad_check,
    load_model,
    ms_loss,
    recall_at_k,
    similarity_matrix,
    spectral_decay,
    train,
)

__all__ = [
    "Config",
    "ConfigError",
    "DegenerateError",
    "Error",
    "IoError",
    "Model",
    "NumericalError",
    "ShapeError",
    "consistency_loss",
    "correlation_map",
    "diversity_loss",
    "embedding_space_density",
    "encode_residuals",
    "evaluate",
    "generate_dataset",
    "grad_check",
    "load_model",
    "ms_loss",
    "recall_at_k",
    "similarity_matrix",
    "spectral_decay",
    "train",
]
