"""Services: rollouts, tools, retrieval, rewards, GRPO, forge and evaluation."""
