"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class MdhError(Exception):
    """Base class for all errors raised by this package."""


# -- core -------------------------------------------------------------------
class NonMatchingRanges(MdhError):
    pass


class OverlappingDimRanges(MdhError):
    pass


class RangesNotAPartition(MdhError):
    pass


class DimNotCollapsed(MdhError):
    pass


class RangeMismatch(MdhError):
    pass


class RangesNotOrdered(MdhError):
    pass


class MixedVariantError(MdhError, TypeError):
    """Arithmetic between Int64, Float64 or tuples of different shape."""


# -- highlevel ----------------------------------------------------------------
class UndefinedCellRead(MdhError):
    pass


class NegativeIndexReachable(MdhError):
    pass


class InconsistentNonInjectiveWrite(MdhError):
    pass


class MixedIncompatibleOperators(MdhError):
    def __init__(self, message: str, dims: tuple[int, int] | None = None):
        super().__init__(message)
        self.dims = dims


class ParseError(MdhError):
    """Malformed spec, config or expression text, with an optional source position."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", column {col})" if col is not None else ")")
        super().__init__(message + where)
        self.line = line
        self.col = col


# -- asm / tuning / lowering ----------------------------------------------------
class UnknownPreset(MdhError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class OutOfRange(MdhError, IndexError):
    pass


class NonDivisible(MdhError, ValueError):
    pass


class InvalidConfig(MdhError, ValueError):
    def __init__(self, message: str, violations=()):
        super().__init__(message)
        self.violations = tuple(violations)


class NoValidConfigFound(MdhError):
    pass


class UnknownFixture(MdhError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


# -- interpreter / codegen ----------------------------------------------------
class MissingWeight(MdhError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class UnsupportedScalarOp(MdhError):
    pass


class CompilerUnavailable(MdhError):
    pass


class Mismatch(MdhError):
    pass
