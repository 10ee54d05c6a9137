"""Hysteresis of magnetic shape memory composites on a periodic cell."""
