"""Spectral Galerkin simulation and verification toolkit for stochastic
singular-diffusion equations posed in an H^-1-type Gelfand triple."""

__version__ = "0.1.0"

from . import drift, galerkin, noise, orlicz, triple, verify  # noqa: F401
