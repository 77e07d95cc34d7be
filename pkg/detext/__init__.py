"""DeText: representation-based deep text ranking."""

__version__ = "0.1.0"
