"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or generator parameters."""


class ParseError(ValueError):
    """Malformed input file; carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConnectivityError(ValueError):
    """A broker cannot reach some compute node; carries the offending pairs."""

    def __init__(self, message, pairs=()):
        self.pairs = list(pairs)
        super().__init__(message)


class InfeasibleError(RuntimeError):
    """The transportation problem has no feasible flow; carries residual demand."""

    def __init__(self, message, residual_demand=None):
        self.residual_demand = residual_demand
        super().__init__(message)


class StateError(RuntimeError):
    """Simulation state machine violation (e.g. double activation)."""


class InconsistencyError(RuntimeError):
    """Internal data inconsistency (e.g. more dedicated containers on a node
    than the node owns)."""
