"""Packaged data files (question templates)."""
