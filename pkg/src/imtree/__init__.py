"""Binary-tree bit-to-pattern mapping and rate optimization for OFDM index modulation."""

__version__ = "0.1.0"
