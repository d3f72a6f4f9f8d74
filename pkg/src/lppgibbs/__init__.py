"""Simulation and verification tools for Brownian LPP line ensembles,
Dyson/GUE eigenvalue processes and mutually avoiding Brownian bridges."""

__version__ = "0.1.0"
