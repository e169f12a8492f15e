"""Factorized OOD evaluation for closed-loop driving policies at desk scale."""

__version__ = "0.1.0"
