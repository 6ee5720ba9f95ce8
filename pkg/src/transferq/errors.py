"""Exception hierarchy shared across the package."""


class TransferQError(Exception):
    """Base class for all library errors."""


class RuleEvaluationError(TransferQError):
    """A prediction rule could not be evaluated on some observation."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class UndefinedUtilityError(RuleEvaluationError):
    """Utility (or its inverse) is undefined at the requested lottery."""


class FitError(TransferQError):
    """A decision rule could not produce a prediction rule."""


class LinearSolveError(FitError):
    """The kernel ridge system is singular."""


class TensorError(TransferQError):
    """A transfer-error tensor is malformed or incompatible with the request."""


class IngestError(TransferQError):
    """Input data could not be parsed."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
