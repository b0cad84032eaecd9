"""Latency-aware scheduling and resource allocation for two-tier federated learning."""

__version__ = "0.1.0"
