"""Simulation of a free-space B92/BB84 quantum key distribution link with
synchronous gated detection, frame-based sifting and 8B/10B line coding."""

__version__ = "0.1.0"
