"""Security analysis and simulation of decoy-state MDI-QKD."""

__version__ = "0.1.0"
