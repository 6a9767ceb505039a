"""Evaluation toolkit for promptable video segmentation: mask metrics,
simulated annotators, interactive protocols, and a streaming memory bank."""

__version__ = "0.1.0"
