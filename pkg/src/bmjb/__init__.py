"""Brownian motion with jump boundary: exact simulation, spectra, couplings."""

from .model import Interval, JumpMeasure, RandomStream, RunConfig, quantize, reflect, sample_jump

__version__ = "0.1.0"

__all__ = [
    "Interval",
    "JumpMeasure",
    "RandomStream",
    "RunConfig",
    "quantize",
    "reflect",
    "sample_jump",
    "__version__",
]
