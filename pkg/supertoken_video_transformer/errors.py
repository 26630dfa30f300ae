"""
Exception hierarchy shared by every package layer.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical aborts with 3, anything else with 1.
"""


class SVTError(Exception):
    exit_code = 1


class ConfigError(SVTError, ValueError):
    """Invalid document, schedule, window partition or model geometry."""
    exit_code = 2


class SpecError(ConfigError):
    """Synthetic video spec that cannot be rendered."""


class ShapeError(SVTError, ValueError):
    pass


class ArgumentError(SVTError, ValueError):
    pass


class ContractViolation(SVTError, AssertionError):
    """A precondition another component promised to uphold was broken."""


class TapeError(SVTError, RuntimeError):
    pass


class NumericalAbort(SVTError):
    exit_code = 3

    def __init__(self, message: str, op: str = None):
        super().__init__(message)
        self.op = op
