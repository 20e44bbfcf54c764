"""Spin systems on d-ary trees: kernels, dynamics, ratio recursions and coloring type recursions."""

__version__ = "0.1.0"
