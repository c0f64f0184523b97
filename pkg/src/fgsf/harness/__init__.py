"""Experiment orchestration: configuration, runs, checkpoints, sweeps, analysis."""
