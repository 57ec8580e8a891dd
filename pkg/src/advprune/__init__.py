"""Sparse robust training toolkit: splitting-method pruners inside an
adversarial training loop over small networks, with metrics and a runner."""

__version__ = "0.1.0"
