"""Fractional-order federated averaging simulator."""

from fracfed.errors import ConfigError, FormatError, NumericError, UsageError
from fracfed.numerics import (
    FracConfig,
    bootstrap_step,
    derive_stream,
    effective_step,
    frac_factor,
    gamma,
    lr_schedule,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "FracConfig",
    "NumericError",
    "UsageError",
    "bootstrap_step",
    "derive_stream",
    "effective_step",
    "frac_factor",
    "gamma",
    "lr_schedule",
]
__version__ = "0.1.0"
