"""Variational inference for conjugate-exponential-family models with tuneable gradient noise.

``engine.fit`` runs batch VI, SVI or SVI+ on any model from ``sviplus.models``;
``diagnostics`` checks the statistical properties of the SVI+ gradient.
"""
from .engine import (
    Constant,
    ConstantM,
    LinearRamp,
    PowerDecay,
    Settings,
    TraceRow,
    apply_update,
    draw_noise_weights,
    fit,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    InvalidParameterError,
    NumericalError,
    ParseError,
    SviError,
)

__version__ = "0.1.0"
