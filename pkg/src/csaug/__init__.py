"""Code-switched speech data synthesis from monolingual corpora."""

__version__ = "0.1.0"
