"""Numerical laboratory for the Lorentz-boosted self-similar blowup family of the
focusing cubic wave equation in three dimensions."""

__version__ = "0.1.0"
