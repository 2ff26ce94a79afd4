"""Harmonic chains with conservative noise: microscopic dynamics, phonon kinetics, transport."""

__version__ = "0.1.0"
