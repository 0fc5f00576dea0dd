"""Quantum Rabi model phase-transition simulations for a trapped-ion platform."""

__version__ = "0.1.0"
