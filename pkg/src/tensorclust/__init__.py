"""Tensor normal mixture clustering with the doubly-enhanced EM algorithm."""

from .deem import DeemConfig, FitResult, fit, select_k, tune
from .tnmm import DiscriminantSet, TnmmParams

__all__ = ["DeemConfig", "DiscriminantSet", "FitResult", "TnmmParams", "fit", "select_k", "tune"]
__version__ = "0.1.0"
