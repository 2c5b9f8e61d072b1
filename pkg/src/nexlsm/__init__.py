"""Nested exemplar latent space models for dynamic networks.

Simulation, full-Bayes inference via a built-in adaptive Hamiltonian
Monte Carlo sampler, a dynamic latent factor competitor, and an
evaluation harness, all at desk scale.
"""

__version__ = "0.1.0"

from .kernels import CovSpec
from .nexmodel import DesignData, MgpHyper, NexConfig, NexParams, NexPosterior
from .sampler import ChainDraws, HmcConfig
from .simulate import SimSpec, SyntheticDataset
from .tensor3 import CpFactorSet, Tensor3

__all__ = [
    "__version__",
    "ChainDraws",
    "CovSpec",
    "CpFactorSet",
    "DesignData",
    "HmcConfig",
    "MgpHyper",
    "NexConfig",
    "NexParams",
    "NexPosterior",
    "SimSpec",
    "SyntheticDataset",
    "Tensor3",
]
