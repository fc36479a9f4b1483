"""Offline conformance linter for 5G SBI traffic captured in PCAP files."""

__version__ = "0.1.0"
