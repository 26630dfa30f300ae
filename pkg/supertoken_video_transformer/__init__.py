"""Semantic pooling for video transformers, with a FLOP auditor and a synthetic-video harness."""
__version__ = '1.0.0'
