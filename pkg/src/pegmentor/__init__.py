"""Peg-transfer training console: goal-conditioned RL guidance rendered as a
calibrated stereo AR overlay, with a human-in-the-loop service and CLI."""

__version__ = "0.1.0"
