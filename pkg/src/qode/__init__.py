"""Quadratic neural ODEs: gadgets, compilers for smooth targets and tanh nets, and a simulator."""

__version__ = "0.1.0"
