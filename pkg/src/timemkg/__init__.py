"""Knowledge-graph-conditioned multivariate time-series models."""
__version__ = "0.1.0"
