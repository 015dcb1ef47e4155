"""Domain errors"""

from typing import Optional


class FingerprintParseError(ValueError):
    """Malformed fingerprint / observation CSV content"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateGeometryError(ValueError):
    """Anchor layout cannot determine a 2D position"""


class RuntimeDegeneracyError(RuntimeError):
    """A run produced no usable result (e.g. NLST never converged)"""
