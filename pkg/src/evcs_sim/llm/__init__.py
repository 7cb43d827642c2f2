"""Chat-model decision agent, expert committee, retrieval and record/replay transport."""
