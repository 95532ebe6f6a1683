"""Simulated door/drawer pull-test benches with trial orchestration and analysis."""

__version__ = "0.1.0"
