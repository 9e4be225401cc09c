"""Multilevel robustness for critical points of 2D time-varying vector fields."""
