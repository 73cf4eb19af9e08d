"""LLM adapters: policy HTTP client, pydantic-ai agents and deterministic stubs."""
