"""Exception types raised across the package.

``DataError`` subclasses signal bad inputs (the CLI maps them to exit code 2).
"""


class NcalError(Exception):
    pass


class DataError(NcalError, ValueError):
    pass


class MissingSample(DataError, KeyError):
    def __init__(self, sample_id):
        super().__init__(f"sample id {sample_id!r} not in feature matrix")
        self.sample_id = sample_id

    __str__ = Exception.__str__


class ZeroNormMean(DataError):
    pass


class AlreadyLabeled(DataError):
    pass


class UnknownClass(DataError):
    pass


class TooFewClasses(DataError):
    pass


class TooFewCheckpoints(DataError):
    pass


class EmptyInput(DataError):
    pass


class BudgetExceedsPool(DataError):
    pass


class DegenerateBetween(DataError):
    pass


class InvalidSpec(DataError):
    pass


class DivergedTraining(NcalError, ArithmeticError):
    pass


class ScoringError(DataError):
    """A per-candidate scoring failure, tagged with the offending sample id."""

    def __init__(self, sample_id, cause):
        super().__init__(f"scoring failed for sample {sample_id}: {cause}")
        self.sample_id = sample_id
        self.cause = cause


class CycleError(NcalError):
    def __init__(self, cycle, cause):
        super().__init__(f"cycle {cycle}: {cause}")
        self.cycle = cycle
        self.cause = cause


# file formats

class FormatError(DataError):
    pass


class BadMagic(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class NonFiniteValue(FormatError):
    def __init__(self, row, col, offset):
        super().__init__(f"non-finite value at row {row}, column {col} (byte offset {offset})")
        self.row = row
        self.col = col
        self.offset = offset


class IndexMismatch(FormatError):
    pass
