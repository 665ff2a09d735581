"""Web table classification: genuine (relational) vs layout tables."""

__version__ = "0.1.0"
