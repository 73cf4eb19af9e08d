"""Integration tests - full pipelines over offline backends."""
