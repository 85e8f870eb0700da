"""Command, telemetry and logging plumbing around the simulation engine."""
