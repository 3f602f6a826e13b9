"""Bayesian inference on bivariate tails with a spline-based spectral measure."""

__version__ = "0.1.0"

from .mcmc import ChainConfig, Trace, bayes_estimate, run_chain
from .prior import NormalizerCache, PriorConfig
from .spectral import SpectralMeasure, SpectralParams, build_spectral_measure
from .tail import CensoredSample, MarginParams, censor, log_likelihood

__all__ = [
    "ChainConfig",
    "Trace",
    "bayes_estimate",
    "run_chain",
    "NormalizerCache",
    "PriorConfig",
    "SpectralMeasure",
    "SpectralParams",
    "build_spectral_measure",
    "CensoredSample",
    "MarginParams",
    "censor",
    "log_likelihood",
]
