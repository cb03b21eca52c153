"""Exception types shared across the package."""


class StimputeError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(StimputeError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigurationError(StimputeError, ValueError):
    """A configuration value violates a documented constraint."""


class ContractError(StimputeError, ValueError):
    """A call violates an operation's precondition."""


class ParseError(StimputeError, ValueError):
    """An input file does not match its documented format."""


class TrainingDiverged(StimputeError, RuntimeError):
    """Training produced a non-finite loss and was aborted."""
