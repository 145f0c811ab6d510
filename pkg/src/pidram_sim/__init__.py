"""Cycle-approximate simulator of an end-to-end processing-in-DRAM stack."""

__version__ = "0.1.0"
