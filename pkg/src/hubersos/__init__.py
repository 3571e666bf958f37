"""Robust online regression and linear contextual bandits built on
sum-of-squares moment relaxations, with contamination environments,
dimension reduction, convex-surrogate baselines, and an experiment harness.
"""

__version__ = "0.1.0"
