"""Adversarial multi-task training of a noise-robust frame classifier.

A U-Net generator G maps noisy feature patches towards clean ones, a
least-squares discriminator D scores clean against generated patches, and a
classifier C predicts frame classes from G's bottleneck. At test time only
G's encoder and C are used.
"""
from ._accel import BACKEND, HAS_NUMBA
from .config import RunConfig, load_config
from .numerics import Tensor, backward, grad_check, no_grad

__all__ = ["BACKEND", "HAS_NUMBA", "RunConfig", "Tensor", "backward", "grad_check",
           "load_config", "no_grad"]
__version__ = "0.1.0"
