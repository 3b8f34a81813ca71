"""Content-addressed web provenance with trusty URIs."""

__version__ = "0.1.0"
