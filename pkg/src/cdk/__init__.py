"""Toy-scale cascaded text-to-image diffusion with classifier-free guidance."""

__version__ = "0.1.0"
