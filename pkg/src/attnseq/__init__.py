"""Attention-based recurrent sequence transduction on numpy."""

__version__ = "0.1.0"
