"""Persistence adapters: JSON Lines files, GRPO batch export and tool caches."""
