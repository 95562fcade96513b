"""Imbalanced-label-coupled synthetic datasets and hierarchical-bias analysis tools."""

__version__ = "0.1.0"
