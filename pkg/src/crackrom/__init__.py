"""Localized non-intrusive reduced-basis surrogates for parameterized crack problems."""

__version__ = "0.1.0"
