"""Compound Dirichlet processes: random sums under Dirichlet-process priors."""

__version__ = "0.1.0"
