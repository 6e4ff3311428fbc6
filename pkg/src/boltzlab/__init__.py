"""Numerical toolkit for the non-cutoff space-homogeneous Boltzmann equation."""

from .grid import DistributionFunction, MacroscopicState, VelocityGrid, maxwellian, moments
from .xsection import BtildeModel, CrossSection, DomainError, QuadratureError, btilde, reference_b

__all__ = [
    "BtildeModel",
    "CrossSection",
    "DistributionFunction",
    "DomainError",
    "MacroscopicState",
    "QuadratureError",
    "VelocityGrid",
    "btilde",
    "maxwellian",
    "moments",
    "reference_b",
]

__version__ = "0.1.0"
