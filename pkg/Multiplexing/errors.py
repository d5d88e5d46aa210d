"""
Exception types shared by the analytic, simulation and command-line layers.

The CLI maps these onto exit codes:
    - ConfigError -> 2
    - DomainError (and subclasses) -> 3
    - SimulationError (and subclasses) -> 4
"""


class ModelError(Exception):
    """Base class for every error raised by the Multiplexing package."""


class ConfigError(ModelError):
    """Malformed config file, unknown key or unparseable flag value."""


class DomainError(ModelError, ValueError):
    """Physical parameters or inputs outside their valid range."""


class ProtocolConstraintError(DomainError):
    """A protocol-specific requirement is violated (e.g. mEPL with one qubit)."""


class UnbracketedRootError(DomainError):
    """Strict crossover search found no sign change inside the bracket."""


class SimulationError(ModelError, RuntimeError):
    """The discrete-event engine reached an inconsistent state."""


class LivelockError(SimulationError):
    """The stop rule can never be met (empty queue or exhausted event budget)."""


class ReplicationError(SimulationError):
    """A single replication failed; carries the replication index."""

    def __init__(self, index: int, message: str):
        super().__init__(f"replication {index}: {message}")
        self.index = index
        self.message = message

    def __reduce__(self):
        # Re-raised across worker processes
        return (self.__class__, (self.index, self.message))
