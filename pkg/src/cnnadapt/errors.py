"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A scenario, architecture, or parameter set fails validation."""


class DivergenceError(RuntimeError):
    """A closed-loop run produced a non-finite or runaway state."""


class StaleTraceError(ValueError):
    """A forward trace was paired with a different weight vector."""
