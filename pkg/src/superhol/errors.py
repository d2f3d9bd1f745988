from __future__ import annotations


class SuperholError(Exception):
    """Base error. Every error carries a machine-readable code."""

    code = "E_GENERIC"
    exit_code = 2

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code
        self.message = message

    def as_dict(self) -> dict:
        return {"code": self.code, "message": self.message}


class DimensionError(SuperholError, ValueError):
    code = "E_DIMENSION"


class ParityError(SuperholError, ValueError):
    code = "E_PARITY"


class NotInvertibleError(SuperholError, ArithmeticError):
    code = "E_NOT_INVERTIBLE"
    exit_code = 3


class IndexRangeError(SuperholError, IndexError):
    code = "E_INDEX"


class DSLSyntaxError(SuperholError, ValueError):
    code = "E_SYNTAX"

    def __init__(self, message: str, line: int, column: int, text: str = ""):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column
        self.text = text


class UnknownIdentifierError(SuperholError, ValueError):
    code = "E_UNKNOWN_IDENTIFIER"


class UnsupportedOrderError(SuperholError, ValueError):
    code = "E_UNSUPPORTED_ORDER"


class PreconditionError(SuperholError, ValueError):
    code = "E_PRECONDITION"


class EndpointMismatchError(SuperholError, ValueError):
    code = "E_ENDPOINT"


class SceneError(SuperholError):
    code = "E_SCENE"


class NumericFailure(SuperholError, ArithmeticError):
    code = "E_NUMERIC"
    exit_code = 3


class VerificationFailure(SuperholError):
    code = "E_VERIFY"
    exit_code = 1
