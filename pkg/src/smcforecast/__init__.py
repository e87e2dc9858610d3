"""Probabilistic day-ahead forecasting with a particle-filtered last layer.

A recurrent feature extractor is fit to hourly covariates first; its hidden
states then drive a small nonlinear Gaussian state-space model whose
parameters are estimated by sequential Monte Carlo score ascent. A linear
Gaussian baseline fit by EM is included for comparison, along with an
evaluation protocol (interval coverage and point error on rolling 24h-ahead
windows) and a command line front end.
"""

from .util import (
    ConfigError,
    DataError,
    NumericalError,
    SchemaError,
    StaleFeatureError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "NumericalError",
    "SchemaError",
    "StaleFeatureError",
    "__version__",
]
