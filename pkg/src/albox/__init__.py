"""albox: object-level active-learning query engine for oriented detection."""

__version__ = "0.1.0"
