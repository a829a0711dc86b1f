"""Part-compositional generation over a synthetic embedding world."""

__version__ = "0.1.0"
