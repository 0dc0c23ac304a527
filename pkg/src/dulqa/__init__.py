"""Local quantum annealing with deep-unfolded (learned) step-size and coupling schedules."""

__version__ = "0.1.0"

E_GS_SK = -1.526
"""Ground-state energy per spin of SK in the limit n -> infinity, doubled (sum over i != j).

Twice the Parisi value -0.7633 for the i < j convention.
"""
