"""Temporal action detection fusion, evaluation and simulation."""
