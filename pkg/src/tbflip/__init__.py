"""Quantum particle on Z^d with hopping T and a potential of independent spin flips.

Disorder-averaged dynamics are computed two ways: Monte Carlo over flip
trajectories (:mod:`tbflip.ensemble`) and the fibered generator on the
augmented space (:mod:`tbflip.spectral`).
"""

from importlib import metadata

from .ensemble import (DiffusionEstimate, EnsembleSpec, MeanField, characteristic_function, fit_diffusion_cf,
                       fit_diffusion_m2, run_ensemble, second_moment)
from .evolution import Propagator, PropagatorTolerance, evolve_trajectory, propagate_constant
from .lattice import HoppingKernel, LatticeWindow, WaveFunction, nearest_neighbor, validate_hopping
from .markov import FlipProcessConfig, PotentialPath, flip_constants, sample_trajectory

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:
    __version__ = "0+unknown"

__all__ = [
    "HoppingKernel",
    "LatticeWindow",
    "WaveFunction",
    "nearest_neighbor",
    "validate_hopping",
    "FlipProcessConfig",
    "PotentialPath",
    "flip_constants",
    "sample_trajectory",
    "Propagator",
    "PropagatorTolerance",
    "propagate_constant",
    "evolve_trajectory",
    "EnsembleSpec",
    "MeanField",
    "DiffusionEstimate",
    "run_ensemble",
    "characteristic_function",
    "second_moment",
    "fit_diffusion_m2",
    "fit_diffusion_cf",
]
