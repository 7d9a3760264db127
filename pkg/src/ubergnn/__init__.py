"""Session-based next-item recommendation with gated graph propagation and a
DeepFM user tower fused by attention."""

__version__ = "0.1.0"
