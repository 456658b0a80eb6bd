"""Magnetic Bistritzer-MacDonald numerics: lattices, special functions, fiber operators,
zero modes, magic angles, spectra and Chern numbers."""

__version__ = "0.1.0"
