"""Exception types shared across the package."""

from __future__ import annotations


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class DegenerateError(ValueError):
    """The computation is mathematically undefined for this input.

    Typical causes are a flat bulk spectrum (no high-dimensional distortion to
    model) or a spike sitting on top of a bulk eigenvalue.
    """


class PoleError(DegenerateError):
    """A spectral transform was evaluated at or inside the bulk."""


class CSVFormatError(ValidationError):
    def __init__(self, path: str, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")
