"""Settings, run-config loading, logging setup and service wiring."""
