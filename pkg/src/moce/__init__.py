"""Mixture of Cox proportional-hazards experts."""
