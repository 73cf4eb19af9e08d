"""Outgoing ports: model clients, search backends, tokenizers and stores."""
