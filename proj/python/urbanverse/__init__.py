"""Hex-grid city embeddings with a retrieval-conditioned diffusion regressor.

Thin wrapper around the native module; every pipeline stage reads and writes
directories the same way the command line tool does.
"""

from ._core import (
    ConfigError,
    DataError,
    NumericError,
    ShapeError,
    __version__,
    ablate,
    aggregate,
    compute_metrics,
    default_config,
    embed,
    evaluate,
    finetune,
    kde,
    posterior_coeffs,
    predict,
    pretrain,
    read_predictions,
    synth,
    train,
    walks,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "ShapeError",
    "__version__",
    "ablate",
    "aggregate",
    "compute_metrics",
    "default_config",
    "embed",
    "evaluate",
    "finetune",
    "kde",
    "posterior_coeffs",
    "predict",
    "pretrain",
    "read_predictions",
    "synth",
    "train",
    "walks",
]
