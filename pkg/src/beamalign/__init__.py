"""Learned two-tier probing codebooks for mmWave beam alignment."""

__version__ = "0.1.0"
