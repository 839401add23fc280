"""American option pricing by all-at-once policy iteration with
parallel-in-time preconditioning."""

__version__ = "0.1.0"
