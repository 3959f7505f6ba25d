"""Fidelity-weighted learning."""
