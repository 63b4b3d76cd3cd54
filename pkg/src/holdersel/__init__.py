"""Noise-induced selection and stochastic averaging for systems whose fast
drift is only Hölder continuous.

Modules
-------
coeffs
    Coefficient families, model records and assumption checks.
sim
    Seeded batch integrators for the small-noise, frozen and two-scale systems.
extremal
    Extremal solutions, the averaged ODE and forced integral equations.
analysis
    Closed forms and quadratures: selection probabilities, scale function,
    exit-time bound and the frozen invariant density.
generator
    Averaged generator of the two-scale limit and its test functions.
experiments
    Monte Carlo harnesses with mergeable per-path tallies.
cli
    Command-line entry point.
"""

from ._version import __version__
from .analysis import (
    FrozenParams,
    InvariantDensity,
    averaged_drift,
    exit_probability_quadrature,
    exit_time_bound,
    gamma_asymptotic,
    invariant_density,
    scale_function,
    selection_probabilities,
    stretched_exp_integral,
)
from .coeffs import (
    CoefficientField,
    GridSpec,
    SmallNoiseModel,
    TwoScaleModel,
    make_function,
    register_family,
    signed_pow,
    validate_model,
)
from .errors import (
    ConfigError,
    DomainError,
    EvaluationError,
    HolderselError,
    IntegrationError,
    NumericError,
    QuadratureError,
    ResourceError,
    SamplingError,
    StabilityError,
)
from .extremal import averaged_ode_solve, extremal_solution, forced_solution
from .sim import StepPolicy, integrate_small_noise, integrate_two_scale, simulate_small_noise

__all__ = [
    "__version__",
    "FrozenParams",
    "InvariantDensity",
    "averaged_drift",
    "exit_probability_quadrature",
    "exit_time_bound",
    "gamma_asymptotic",
    "invariant_density",
    "scale_function",
    "selection_probabilities",
    "stretched_exp_integral",
    "CoefficientField",
    "GridSpec",
    "SmallNoiseModel",
    "TwoScaleModel",
    "make_function",
    "register_family",
    "signed_pow",
    "validate_model",
    "ConfigError",
    "DomainError",
    "EvaluationError",
    "HolderselError",
    "IntegrationError",
    "NumericError",
    "QuadratureError",
    "ResourceError",
    "SamplingError",
    "StabilityError",
    "averaged_ode_solve",
    "extremal_solution",
    "forced_solution",
    "StepPolicy",
    "integrate_small_noise",
    "integrate_two_scale",
    "simulate_small_noise",
]
