"""Stochastic homogenization of Helmholtz scattering by a random composite."""

from .microstructure import (CoefficientField, MediumParams, Microstructure, ProcessConfig,
                             calibrate_intensity, sample_matern2, volume_fraction)
from .seeding import derive_seed

__all__ = ["CoefficientField", "MediumParams", "Microstructure", "ProcessConfig",
           "calibrate_intensity", "derive_seed", "sample_matern2", "volume_fraction"]
__version__ = "0.1.0"
