"""
Exception hierarchy for keymark.

Everything raised on purpose derives from KeymarkError so the CLI can map
it to exit code 2 with a single message line.
"""

from pathlib import Path
from typing import Optional, Union

PathLike = Union[str, Path]


class KeymarkError(Exception):
    """Base class for all keymark errors."""


# ----------------------------
# VALIDATION
# ----------------------------

class ValidationError(KeymarkError, ValueError):
    """A value violates a documented precondition or invariant."""


class SpecValidationError(ValidationError):
    """Invalid ModelSpec or architecture string."""


class ShapeError(ValidationError):
    """Input dimensions do not match the model or dataset."""


class DatasetValidationError(ValidationError):
    """Dataset invariant violated (NaN features, empty, bad names)."""


class LabelRangeError(DatasetValidationError):
    """A label lies outside [0, num_classes)."""


class SplitError(ValidationError):
    """Split fractions are invalid or would yield an empty part."""


class ConfigError(ValidationError):
    """Configuration value or configuration file is invalid."""


class InvalidPolicyError(ValidationError):
    """Verification threshold is outside (chance, 1]."""


class NumericalInstabilityError(KeymarkError):
    """Training produced non-finite parameters."""


# ----------------------------
# DATA INGESTION
# ----------------------------

class DatasetFileNotFoundError(KeymarkError):
    def __init__(self, path: PathLike):
        self.path = Path(path)
        super().__init__(f"Dataset file not found: {self.path}")


class MissingColumnError(KeymarkError):
    def __init__(self, column: str, path: Optional[PathLike] = None):
        self.column = column
        self.path = path
        where = f" in {path}" if path else ""
        super().__init__(f"Column '{column}' not found{where}")


class UnparseableCellError(ValidationError):
    def __init__(self, column: str, row: int, value: str):
        self.column = column
        self.row = row
        self.value = value
        super().__init__(f"Cannot parse '{value}' as a number (column '{column}', row {row})")


class AllMissingColumnError(ValidationError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"Column '{column}' has no observed values; cannot impute")


# ----------------------------
# ARTIFACTS (checkpoints, key files, reports)
# ----------------------------

class ArtifactError(KeymarkError):
    """Problem reading or writing a keymark artifact file."""

    def __init__(self, message: str, path: Optional[PathLike] = None):
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            message = f"{self.path}: {message}"
        super().__init__(message)


class ArtifactIOError(ArtifactError):
    """File missing or unreadable/unwritable."""


class CorruptFileError(ArtifactError):
    """File content is not a well-formed document."""


class FormatVersionError(ArtifactError):
    """Document declares an unsupported format version."""


class ShapeMismatchError(ArtifactError):
    """Document arrays disagree with the declared shapes."""


class KeyIntegrityError(ArtifactError):
    """Key content does not match its recorded digest or invariants."""


# ----------------------------
# WATERMARK PIPELINE
# ----------------------------

class PipelineStateError(KeymarkError):
    """Pipeline stages were invoked out of order."""


class InsufficientCandidatesError(KeymarkError):
    """Fewer eligible candidates than the requested key length."""

    def __init__(self, eligible: int, required: int):
        self.eligible = eligible
        self.required = required
        self.hint = "raise the pool multiplier C or the number of embedding epochs"
        super().__init__(
            f"Only {eligible} eligible candidates for a key of length {required}; {self.hint}"
        )


class WatermarkInvariantError(KeymarkError):
    """A freshly generated key failed its construction guarantee."""
