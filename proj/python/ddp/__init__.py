"""Conditional diffusion for dense prediction (C++ core)."""

from ._ddp import (
    Codec,
    ContractError,
    DivergenceError,
    DomainError,
    FormatError,
    IoError,
    Predictor,
    ValidationError,
    alpha_bar,
    corrupt,
    ddim_step,
    default_config,
    depth_metrics,
    gen_depth,
    gen_segmentation,
    log_snr,
    miou,
    run_cli,
    time_pairs,
    train,
)

__all__ = [
    "Codec",
    "ContractError",
    "DivergenceError",
    "DomainError",
    "FormatError",
    "IoError",
    "Predictor",
    "ValidationError",
    "alpha_bar",
    "corrupt",
    "ddim_step",
    "default_config",
    "depth_metrics",
    "gen_depth",
    "gen_segmentation",
    "log_snr",
    "miou",
    "run_cli",
    "time_pairs",
    "train",
]
