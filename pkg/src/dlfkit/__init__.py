"""Affine-generalized diffusion utilities and a detachable latent denoising trainer."""
from dlfkit.kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
