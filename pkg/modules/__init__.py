"""Numerical modules of the standard-map laboratory."""
