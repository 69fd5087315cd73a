"""Contactless fingerprint recognition: minutiae + siamese embedding branches with score fusion."""

__version__ = "0.1.0"
