"""Group-sparse optimization with nonconvex group regularizers, masked
reparameterizations, OMPR local search and phase-scheduled block pruning."""

__version__ = "0.1.0"
