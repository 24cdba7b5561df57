"""Rare-earth-ion quantum computing: register yield, bus distillation, read-out and entanglement bounds."""

__version__ = "0.1.0"
