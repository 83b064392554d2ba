"""Pseudospectral simulator and verification lab for stochastic convective
Brinkman-Forchheimer equations on the periodic torus with compensated Poisson
jump noise."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AdmissibilityError,
    BlowUpError,
    ConfigurationError,
    ConvergenceError,
    SCBFError,
)
from .integrator import EnsembleResult, SimulationConfig, run_coupled, run_ensemble  # noqa: E402
from .noise import JumpModel, MarkDistribution, MarkProfile, derive_constants  # noqa: E402
from .operators import CBFParameters, eta_constant  # noqa: E402
from .spectral import SpectralField, TorusDomain, make_domain, norm  # noqa: E402

__all__ = [
    "AdmissibilityError", "BlowUpError", "CBFParameters", "ConfigurationError",
    "ConvergenceError", "EnsembleResult", "JumpModel", "MarkDistribution", "MarkProfile",
    "SCBFError", "SimulationConfig", "SpectralField", "TorusDomain", "derive_constants",
    "eta_constant", "make_domain", "norm", "run_coupled", "run_ensemble",
]
