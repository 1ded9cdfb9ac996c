"""Numerical laboratory for enhanced dissipation near Poiseuille flow."""

__version__ = "0.1.0"
