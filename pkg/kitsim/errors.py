"""
Exception hierarchy for kitsim

Every failure raised by the library derives from KitsimError so the CLI can
map it onto an exit code without catching unrelated bugs by accident.
"""


class KitsimError(Exception):
    """Base class for all kitsim errors"""


class ParameterDomainError(KitsimError, ValueError):
    """A model parameter or state value lies outside its admissible range"""


class BoundViolationError(KitsimError, ArithmeticError):
    """An update left [0, 1] by more than the round-off tolerance"""


class ConfigError(KitsimError):
    """A manifest could not be read, parsed or validated"""


class UsageError(KitsimError):
    """The library or CLI was invoked with inconsistent arguments"""


class RunError(KitsimError):
    """A simulation failed at runtime; the message names the grid point"""
