"""Domain-reweighted process reward model training on a synthetic reasoning bench."""

__version__ = "0.1.0"
