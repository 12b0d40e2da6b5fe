"""Delay-aware multi-cell OFDMA downlink scheduling with Lyapunov-guided QMIX."""

__version__ = "0.1.0"
