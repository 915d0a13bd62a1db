"""Moderately interacting particle systems, their limit aggregation-diffusion
PDE, and the numerical checks connecting the two."""

__version__ = "0.1.0"

from .config import (
    InitSpec,
    ModelConfig,
    PdeConfig,
    PdeInit,
    SigmaSchedule,
    SweepPlan,
    parse,
    serialize,
    validate_config,
)
from .errors import (
    BlowUpError,
    CFLError,
    ConfigError,
    MeanFieldError,
    NegativeDensityError,
    NumericalError,
)
from .grid import DensityGrid
from .kernels import AggregationSpec, KernelSet, KernelSpec, PotentialSpec, rescale
from .particles import ParticleEnsemble, simulate

__all__ = [
    "AggregationSpec",
    "BlowUpError",
    "CFLError",
    "ConfigError",
    "DensityGrid",
    "InitSpec",
    "KernelSet",
    "KernelSpec",
    "MeanFieldError",
    "ModelConfig",
    "NegativeDensityError",
    "NumericalError",
    "ParticleEnsemble",
    "PdeConfig",
    "PdeInit",
    "PotentialSpec",
    "SigmaSchedule",
    "SweepPlan",
    "parse",
    "rescale",
    "serialize",
    "simulate",
    "validate_config",
]
