"""Multimodal search agent: rollouts, rewards, GRPO export and evaluation."""
