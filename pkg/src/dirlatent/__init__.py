"""Dirichlet-relaxed codebook latents for temporally consistent video restoration."""

__version__ = "0.1.0"
