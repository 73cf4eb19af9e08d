"""Outgoing adapters: LLM clients, search backends, tokenizers and persistence."""
