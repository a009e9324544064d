"""Bitstream-corrupted video dataset forge."""

__version__ = "0.1.0"
