"""Training, evaluation, checkpoints and serving."""
