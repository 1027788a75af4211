"""Scaling limits of self-similar Markov chains.

Integer-valued chains whose transition law is asymptotically invariant under
rescaling, their Levy/Lamperti limits, and Monte Carlo checks of the
convergence of marginals and absorption times.
"""
from ._accel import HAVE_NUMBA, backend
from .embedding import ScalingSequence
from .kernels import BesselWalk, DownWalk, FragCoag, RareJumpDrift, kernel_from_config
from .levy import JumpMeasure, LevyTriplet, laplace_exponent

__version__ = "0.1.0"

__all__ = [
    "HAVE_NUMBA",
    "backend",
    "ScalingSequence",
    "BesselWalk",
    "DownWalk",
    "FragCoag",
    "RareJumpDrift",
    "kernel_from_config",
    "JumpMeasure",
    "LevyTriplet",
    "laplace_exponent",
]
