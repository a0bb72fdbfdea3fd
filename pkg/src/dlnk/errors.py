"""Exception hierarchy.

Every error carries the CLI exit code it maps to, so the command-line
layer never needs a lookup table.
"""


class DlnkError(Exception):
    exit_code = 1
    hint = ""


class ConfigError(DlnkError, ValueError):
    exit_code = 2
    hint = "check the config file and command-line flags"


class DofTooSmall(ConfigError):
    hint = "the mixture representation needs every hidden width/channel count above the mixing dimension"


class DataError(DlnkError, ValueError):
    exit_code = 3
    hint = "check the dataset files"


class ParseError(DataError):
    def __init__(self, message, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class ShapeMismatch(DataError):
    pass


class NumericError(DlnkError, ArithmeticError):
    exit_code = 4


class NotSymmetric(NumericError):
    pass


class NotPositiveDefinite(NumericError):
    hint = "the matrix failed the scaled-pivot Cholesky test"


class EigenvalueViolation(NumericError):
    pass


class RankDeficientDesign(NumericError):
    hint = "the enlarged design Gram matrix must be strictly positive definite"

    def __init__(self, message, smallest_eigenvalue=None):
        self.smallest_eigenvalue = smallest_eigenvalue
        super().__init__(message)


class SingularGram(NumericError):
    hint = "omega needs an invertible P x P Gram matrix (P <= N_0, independent inputs)"


class DegenerateWeights(NumericError):
    hint = "importance weights collapsed; switch to the Metropolis sampler"

    def __init__(self, message, ess=None):
        self.ess = ess
        super().__init__(message)


class MethodCostExceeded(NumericError):
    hint = "tensor quadrature is limited to L <= 3; use monte_carlo"


class NoInteriorMinimum(NumericError):
    pass


class NonFiniteObjective(NumericError):
    pass


class DiagnosticFailure(DlnkError):
    exit_code = 5


class ChainNotMixed(UserWarning):
    pass


class IntegrableSingularity(UserWarning):
    pass
