"""Nonmyopic Bayesian optimization over macro-actions with GP beliefs."""
