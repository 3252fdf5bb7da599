"""Exception hierarchy shared by all modules.

Each class carries the process exit code the command-line front end uses when
the error escapes a subcommand.
"""


class LayershapError(Exception):
    exit_code = 1


class InvalidParameterError(LayershapError, ValueError):
    """A caller-supplied parameter violates a documented precondition."""

    exit_code = 2


class BudgetError(InvalidParameterError):
    """Exact enumeration was requested beyond the configured layer ceiling."""


class InvalidInputError(LayershapError, ValueError):
    """Input data (tokens, weights, files) is malformed."""

    exit_code = 3


class CheckpointFormatError(InvalidInputError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CheckpointVersionError(CheckpointFormatError):
    pass


class NumericFailure(LayershapError, ArithmeticError):
    """A computation produced a non-finite value."""

    exit_code = 4
