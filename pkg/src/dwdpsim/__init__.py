"""Simulator for data-parallel MoE inference with distributed expert weights."""

__version__ = "0.1.0"
