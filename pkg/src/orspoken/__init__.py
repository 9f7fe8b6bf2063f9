"""Object referring with spoken language: pipeline and evaluation toolkit."""

__version__ = "0.1.0"
