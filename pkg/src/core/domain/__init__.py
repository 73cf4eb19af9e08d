"""Records, run configuration, knowledge graph and domain errors."""
