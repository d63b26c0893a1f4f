"""Exception hierarchy shared by every module of the package."""


class MonitoredQubitError(Exception):
    """Base class for all errors raised by :mod:`monitored_qubit`."""


class ParameterDomainError(MonitoredQubitError, ValueError):
    """A physical or numerical parameter lies outside its allowed domain."""


class NumericalUnderflowError(MonitoredQubitError, FloatingPointError):
    """An outcome probability underflowed to zero in floating point."""

    def __init__(self, message, bin_index=None):
        if bin_index is not None:
            message = f"{message} (bin {bin_index})"
        super().__init__(message)
        self.bin_index = bin_index


class DegenerateConditioningError(MonitoredQubitError, ValueError):
    """Conditioning on an event of (numerically) zero probability."""


class IntegratorInstabilityError(MonitoredQubitError, ArithmeticError):
    """The diagnostic Euler stepper left the space of density matrices."""


class EmptySubsetError(MonitoredQubitError, ValueError):
    """A selection over an ensemble matched no trajectories."""

    def __init__(self, message, count=0):
        super().__init__(f"{message} (selected {count} trajectories)")
        self.count = count


class InsufficientDataError(MonitoredQubitError, ValueError):
    """Too few samples for the requested statistic."""


class ConfigError(MonitoredQubitError, ValueError):
    """Malformed experiment configuration."""

    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where = f"{where}{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")
        self.line = line
        self.path = path
