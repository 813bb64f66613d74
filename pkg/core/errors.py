# core/errors.py
from __future__ import annotations

from typing import Any, Optional


class DimensionMismatchError(ValueError):
    pass


class NonFiniteValueError(ValueError):
    pass


class NotSymmetricError(ValueError):
    pass


class NotPositiveDefiniteError(ValueError):
    pass


class ZeroPivotError(ArithmeticError):
    """
    P_{i\\j}（または周辺精度）が厳密に 0 になった。
    減衰や正則化で握りつぶさない。対角ローディングは svm 側の責務。
    """

    def __init__(self, i: int, j: int, what: str = "cavity precision") -> None:
        self.i = int(i)
        self.j = int(j)
        super().__init__(f"zero {what} at node pair ({self.i}, {self.j})")


class GabpNotConvergedError(RuntimeError):
    """partial solution / diagnosis を持ったまま投げる。"""

    def __init__(self, message: str, solution: Any = None, diagnosis: Any = None) -> None:
        super().__init__(message)
        self.solution = solution
        self.diagnosis = diagnosis


class InvalidLabelError(ValueError):
    pass


class InvalidPartitionError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None) -> None:
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class NonMonotonicIndexError(ParseError):
    pass


class RaggedRowsError(ParseError):
    pass


class ModelFormatError(ValueError):
    pass


class UsageError(ValueError):
    pass
