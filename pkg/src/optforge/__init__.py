"""Symbolic optimizer search over a depth-bounded super-tree of update rules."""

__version__ = "0.1.0"
