"""Ledger-backed edge node selection for computation offloading."""

__version__ = "0.1.0"
