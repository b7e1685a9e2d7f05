"""Block-wise intermediate-representation distillation on small residual networks."""

__version__ = "0.1.0"
