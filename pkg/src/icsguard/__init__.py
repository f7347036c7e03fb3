"""Workbench for simulating a two-tank hot-water plant and detecting
concealed cyber attacks via zone-based PCA and LSTM confidence scoring."""

__version__ = "0.1.0"
