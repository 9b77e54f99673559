# shepherd/errors.py
from __future__ import annotations

from typing import Optional


class ShepherdError(Exception):
    """Base for every error raised on purpose by shepherd."""


class ParameterError(ShepherdError, ValueError):
    pass


class DegenerateInputError(ShepherdError, ValueError):
    pass


class ConfigError(ShepherdError):
    pass


class InconsistencyError(ShepherdError):
    pass


class ComplexityGuardError(ShepherdError):
    def __init__(self, d: int, n: int, max_d: int) -> None:
        self.d = d
        self.n = n
        self.max_d = max_d
        self.estimated_calls = (2**d) * n
        super().__init__(
            f"exact enumeration refused: d={d} exceeds guard max_d={max_d} "
            f"(would need 2^{d}*{n} = {self.estimated_calls} model calls)"
        )


class LoadError(ShepherdError):
    def __init__(self, message: str, layer: Optional[int] = None) -> None:
        self.layer = layer
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)


class DataError(ShepherdError):
    pass


class IngestionError(ShepherdError):
    def __init__(self, message: str, path: Optional[str] = None, row: Optional[int] = None) -> None:
        self.path = path
        self.row = row
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


class UndefinedSimilarityError(ShepherdError, ArithmeticError):
    pass


# Errors the CLI reports as "bad input" (exit code 2) rather than runtime failure (3).
VALIDATION_ERRORS = (
    ParameterError,
    ConfigError,
    DataError,
    IngestionError,
    LoadError,
    ComplexityGuardError,
)
