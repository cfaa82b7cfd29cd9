"""Exception hierarchy. Each class carries the CLI exit code it maps to."""

from __future__ import annotations


class HierflowError(Exception):
    exit_code = 1
    kind = "error"

    def to_dict(self) -> dict:
        return {"error": self.kind, "message": str(self)}


class ConfigError(HierflowError, ValueError):
    exit_code = 2
    kind = "config"


class DataError(HierflowError, ValueError):
    exit_code = 3
    kind = "data"


class NumericalError(HierflowError, ArithmeticError):
    exit_code = 4
    kind = "numerical"

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration

    def to_dict(self) -> dict:
        out = super().to_dict()
        if self.iteration is not None:
            out["iteration"] = self.iteration
        return out


class NotPositiveDefiniteError(NumericalError):
    kind = "not_positive_definite"


class InvalidStateError(NumericalError):
    kind = "invalid_state"


class HeaderMismatchError(DataError):
    kind = "header_mismatch"

    def __init__(self, expected, found, path, expected_path=None):
        super().__init__(f"header of {path} does not match {expected_path or 'the first file'}: "
                         f"expected {list(expected)}, found {list(found)}")
        self.expected = list(expected)
        self.found = list(found)
        self.path = str(path)
        self.expected_path = None if expected_path is None else str(expected_path)

    def to_dict(self) -> dict:
        out = super().to_dict()
        out.update(expected=self.expected, found=self.found, path=self.path, expected_path=self.expected_path)
        return out
