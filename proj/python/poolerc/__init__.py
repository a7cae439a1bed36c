"""Pooled exposure and exposure-response models."""

from ._core import (
    ConfigError,
    DegenerateKnotsError,
    DomainError,
    Error,
    ExposureFit,
    InitializationError,
    OutcomeFit,
    ValidationError,
    bspline_basis,
    curve_grid,
    fit_exposure,
    fit_outcome,
    ispline_basis,
    natural_cubic_basis,
    pooling_factor,
    quantile_knots,
    run_command,
    write_example_data,
)

__all__ = [
    "ConfigError",
    "DegenerateKnotsError",
    "DomainError",
    "Error",
    "ExposureFit",
    "InitializationError",
    "OutcomeFit",
    "ValidationError",
    "bspline_basis",
    "curve_grid",
    "fit_exposure",
    "fit_outcome",
    "ispline_basis",
    "natural_cubic_basis",
    "pooling_factor",
    "quantile_knots",
    "run_command",
    "write_example_data",
]
