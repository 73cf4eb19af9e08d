"""Incoming adapters: the command-line interface."""
