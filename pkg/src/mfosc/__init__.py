"""Toolkit for noise- and interaction-induced oscillations in mean-field
systems: particle simulation, spectral solution of the centered density
equation, limit cycles with Floquet analysis, and asymptotic phase maps."""

__version__ = "0.1.0"
