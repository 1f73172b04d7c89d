"""Random recursive trees, their coalescent construction, exact oracles and limit-law experiments."""

__version__ = "0.1.0"
