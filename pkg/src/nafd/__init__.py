"""Simulation and deterministic-equivalent analysis of network-assisted
full-duplex cell-free massive MIMO."""

__version__ = "0.1.0"
