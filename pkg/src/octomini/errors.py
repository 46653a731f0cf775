"""Shared error types.

ConfigError maps to CLI exit code 2, SolverFailure to exit code 3.
"""


class ConfigError(ValueError):
    """Invalid configuration: bad grid size, budget overflow, malformed flags."""


class SolverFailure(RuntimeError):
    """Numerical failure during a run: vacuum state, non-finite field, no dt."""


class EngineShutdown(RuntimeError):
    """Task submitted to an engine that has already been shut down."""


class ReadinessViolation(RuntimeError):
    """Debug tripwire: a local fast-path copy read a boundary before its
    readiness token was published for the current exchange."""
