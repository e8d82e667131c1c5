"""Asymmetric CNN single-image super-resolution on plain numpy."""

__version__ = "0.1.0"
