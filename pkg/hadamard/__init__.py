"""Gradient-based visual and textual explanations of the Hadamard joint in an MLB VQA network."""

__version__ = "1.0.0"
