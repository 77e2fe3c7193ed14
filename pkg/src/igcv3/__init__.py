"""Interleaved low-rank group convolutions as explicit sparse kernel
compositions: construction, complementarity checks, cost accounting and
desk-scale training."""

__version__ = "0.1.0"
