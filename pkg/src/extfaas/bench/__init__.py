"""Workloads, scenarios, reporting and the command line."""
