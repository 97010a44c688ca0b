"""Scenario files, density synthesis, snapshot export and the command line."""
