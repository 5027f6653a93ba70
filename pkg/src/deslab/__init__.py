"""Discrete event plant simulation, fault injection and LSTM-based online fault diagnosis."""

__version__ = "0.1.0"
