"""Batch figure renderer for factorshift CSV tables."""

__version__ = "0.1.0"

from .render import FIGURE_KINDS, SchemaError, render  # noqa: F401
