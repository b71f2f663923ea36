"""Simulation of a heralded CNOT between two atom-cavity network modules."""

__version__ = "0.1.0"
