"""Semi-supervised disentangled VAE (SDVAE-I / SDVAE-II with optional IAF)."""

from ._sdvae import (
    Config,
    ConfigError,
    Error,
    IoError,
    Model,
    NumericError,
    ParseError,
    cli,
    evaluate,
    gradcheck,
    load_idx,
    synthetic,
    train,
)

__all__ = [
    "Config",
    "ConfigError",
    "Error",
    "IoError",
    "Model",
    "NumericError",
    "ParseError",
    "cli",
    "evaluate",
    "gradcheck",
    "load_idx",
    "synthetic",
    "train",
]
