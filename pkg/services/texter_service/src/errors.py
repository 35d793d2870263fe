#!/usr/bin/env python3.10
from typing import Optional

from common_utilities import ConfigError


class TexterError(Exception):
    """Base class for every failure the service reports with its own exit code."""


class ArtifactIOError(TexterError):
    pass


class MissingArtifactError(TexterError):
    def __init__(self, stage: str, path: str):
        super().__init__(f"Missing artefact '{path}': run the '{stage}' stage first")
        self.stage = stage
        self.path = path


class NumericDivergenceError(TexterError):
    def __init__(self, stage: str, step: Optional[int] = None, detail: str = "non-finite value"):
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"{stage}: {detail}{where}")
        self.stage = stage
        self.step = step


class ShapeError(TexterError, ValueError):
    pass


class BankFormatError(TexterError, ValueError):
    def __init__(self, message: str, line_number: Optional[int] = None):
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{prefix}{message}")
        self.line_number = line_number


class ConceptClientError(TexterError):
    def __init__(self, message: str, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class StageError(TexterError):
    """Wraps a failure inside one explanation stage, keeping the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


__all__ = [
    "ConfigError",
    "TexterError",
    "ArtifactIOError",
    "MissingArtifactError",
    "NumericDivergenceError",
    "ShapeError",
    "BankFormatError",
    "ConceptClientError",
    "StageError",
]
