"""Multi-channel GRU surrogates for SDOF seismic response."""

__version__ = "0.1.0"
