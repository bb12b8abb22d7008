"""Transformation-acoustics cloak toolkit.

Submodules: ``tensor`` (material push-forward), ``transforms`` (coordinate
maps), ``layers`` (isotropic layered designs), ``mie`` (layered sphere and
cylinder scattering), ``fdfd`` (Helmholtz finite volumes), ``scene`` (scene
files and presets) and ``cli``.
"""
from . import fdfd, layers, mie, scene, tensor, transforms

__version__ = "0.1.0"
__all__ = ["fdfd", "layers", "mie", "scene", "tensor", "transforms"]
