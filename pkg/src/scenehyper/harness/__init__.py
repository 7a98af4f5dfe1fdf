"""Training, evaluation, checkpointing, gradient checks, reports and the CLI."""
