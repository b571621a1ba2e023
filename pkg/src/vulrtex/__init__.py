"""Graph-backed identification of vulnerability-related issue reports."""

__version__ = "0.1.0"
