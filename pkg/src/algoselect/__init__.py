"""Landscape-aware per-instance algorithm selection workbench."""

__version__ = "0.1.0"
