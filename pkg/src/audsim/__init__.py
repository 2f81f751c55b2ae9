"""Monte-Carlo simulator for compressed-sensing active user detection with
multi-channel frequency diversity."""

__version__ = "0.1.0"
