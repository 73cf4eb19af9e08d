"""Agent runtime core: no HTTP, files or model providers in here."""
