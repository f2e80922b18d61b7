"""Simulation and Monte Carlo checks for SDEs whose drift jumps across a hyperplane.

Modules
-------
model
    Coefficients, declared constants, validation, built-in models.
constants
    Threshold, decay constants, local-time and generator bounds.
paths
    Euler-Maruyama paths, local time, derivative flow, coupled differences.
montecarlo
    Seeded estimates and bound checks.
stationary
    Pullback construction and stationarity tests.
cli
    Command line front end.
"""

__version__ = "0.1.0"

from .constants import (  # noqa: E402
    DecayConstants,
    GeneratorBound,
    decay_constants,
    generator_bound,
    khasminskii_bound,
    lambda_threshold,
    rho,
    rho_upper,
)
from .errors import (  # noqa: E402
    CapabilityError,
    ConfigError,
    DivergedError,
    DomainError,
    HyperdriftError,
    InvalidStateError,
    ThresholdNotMetError,
)
from .model import (  # noqa: E402
    HyperplaneDriftModel,
    ModelConstants,
    bang_bang_model,
    build_model,
    drift_eval,
    jump_matrix,
    ou_model,
    smooth_model,
    validate_model,
)
from .montecarlo import BoundCheck, MCEstimate  # noqa: E402
from .paths import TimeGrid, Trajectory, FlowPath, WienerIncrements, euler_path, wiener, wiener_two_sided  # noqa: E402
