"""Synthetic-scene harness and CLI."""
