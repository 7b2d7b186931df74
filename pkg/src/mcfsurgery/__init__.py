"""Mean curvature flow of closed surfaces with quadratic evolving surface finite
elements, linearly implicit BDF time stepping and automatic mesh surgery."""

__version__ = "0.1.0"
