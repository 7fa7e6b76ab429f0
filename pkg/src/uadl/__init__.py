"""Usage-aware proof engine for a differential-dynamic-logic core language."""

__version__ = "0.1.0"
