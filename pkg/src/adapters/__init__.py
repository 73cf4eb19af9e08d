"""Adapters for the CLI, model endpoints, search backends and files."""
