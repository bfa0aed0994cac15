"""Block-wise large-batch optimizers and a desk-scale benchmark harness."""

__version__ = "0.1.0"
