"""Simulators, experiment drivers and the command-line interface."""
