"""Deterministic multi-cell RAN slicing simulator with a federated
constrained multi-agent RL training harness."""

__version__ = "0.1.0"
