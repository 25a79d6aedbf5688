"""Canonical low-rank approximations and sparse polynomial chaos metamodels
for uncertainty propagation and reliability analysis."""

__version__ = "0.1.0"
