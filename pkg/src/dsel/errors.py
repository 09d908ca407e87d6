"""Exception hierarchy with stable error codes.

Every user-facing failure raises a subclass of :class:`DselError`. The
``code`` string is what the CLI reports and what tests assert on; the
``exit_code`` is the process exit status for command-line use (2 for bad
input, 1 for internal failures).
"""


class DselError(Exception):
    code = "internal"
    exit_code = 1


class MalformedHeaderError(DselError):
    code = "malformed-header"
    exit_code = 2


class MalformedDataError(DselError):
    code = "malformed-data"
    exit_code = 2


class DimensionMismatchError(DselError):
    code = "dimension-mismatch"
    exit_code = 2


class NonFiniteValueError(DselError):
    code = "non-finite-value"
    exit_code = 2


class LabelRangeError(DselError):
    code = "label-out-of-range"
    exit_code = 2


class UnlabeledInputError(DselError):
    code = "unlabeled-input"
    exit_code = 2


class MissingWeightError(DselError):
    code = "missing-weight"
    exit_code = 2


class InvalidParamError(DselError):
    code = "invalid-param"
    exit_code = 2


class ZeroNormError(DselError):
    code = "zero-norm"
    exit_code = 2


class ShapeMismatchError(DselError):
    code = "shape-mismatch"
    exit_code = 2


class InfeasibleMarginalsError(DselError):
    code = "infeasible-marginals"
    exit_code = 2


class AllZeroWeightsError(DselError):
    code = "all-zero-weights"
    exit_code = 2


class InputFileError(DselError):
    code = "input-file"
    exit_code = 2


class DivergenceError(DselError):
    """Training produced a non-finite loss; carries diagnostics."""

    code = "divergence"
    exit_code = 1

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
