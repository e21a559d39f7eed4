"""Spiking neural network equalization and demapping for a simulated IM/DD link."""

__version__ = "0.1.0"
