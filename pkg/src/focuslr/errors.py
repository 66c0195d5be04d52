"""Exception types shared across the package."""


class FocusLRError(Exception):
    """Base class for all focuslr errors."""


class InvalidInput(FocusLRError, ValueError):
    """An operation received values outside its contract (non-finite logits,
    bad label indices, unsupported label arity, ...)."""


class ConfigError(FocusLRError, ValueError):
    """A configuration value or file is invalid (unknown key, out-of-range
    hyperparameter, inconsistent sections)."""


class InsufficientData(FocusLRError, ValueError):
    """Not enough data to compute the requested quantity (e.g. fewer than
    five non-zero paired differences, too few trace records)."""


class TrainingDiverged(FocusLRError, RuntimeError):
    """Training produced a non-finite loss or gradient. Carries the partial
    trace collected up to the failing step when raised by the train loop."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
