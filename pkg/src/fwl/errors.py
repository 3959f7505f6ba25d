"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI prints it as the
first token of its one-line error message.
"""


class FwlError(Exception):
    category = "Error"


class InvalidInput(FwlError, ValueError):
    category = "InvalidInput"


class DimensionMismatch(InvalidInput):
    category = "DimensionMismatch"


class NotPositiveDefinite(FwlError, ArithmeticError):
    category = "NotPositiveDefinite"


class NegativeSd(InvalidInput):
    category = "NegativeSd"


class EmptyTrainingSet(InvalidInput):
    category = "EmptyTrainingSet"


class EmptyDataset(InvalidInput):
    category = "EmptyDataset"


class KTooLarge(InvalidInput):
    category = "KTooLarge"


class BadDimension(InvalidInput):
    category = "BadDimension"


class NonDistributionTarget(InvalidInput):
    category = "NonDistributionTarget"


class NonFiniteGradient(FwlError, ArithmeticError):
    category = "NonFiniteGradient"


class EmptyRange(InvalidInput):
    category = "EmptyRange"


class BadClassCount(InvalidInput):
    category = "BadClassCount"


class BothZero(InvalidInput):
    category = "BothZero"


class NegativeInput(InvalidInput):
    category = "NegativeInput"


class MissingConfidences(InvalidInput):
    category = "MissingConfidences"


class ConfigParse(FwlError, ValueError):
    category = "ConfigParse"


class IoError(FwlError, OSError):
    category = "Io"
