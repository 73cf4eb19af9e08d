"""Incoming ports: the services the CLI drives."""
