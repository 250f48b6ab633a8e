"""Relational communication equilibria and monotone persuasion solvers."""
