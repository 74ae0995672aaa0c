"""Evidential mel generation: numerics, model, training, streaming and data."""
