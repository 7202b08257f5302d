"""Subsequent-embedding steganalysis workbench."""

__version__ = "0.1.0"
