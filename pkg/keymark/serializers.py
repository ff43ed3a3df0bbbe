"""
Document serializers for keymark artifacts.

Each on-disk artifact (checkpoint, key file, report) is a JSON document
validated by one of the pydantic models below before the owning module
turns it into a domain object.
"""

from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Type, TypeVar, Union

import orjson
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .exceptions import CorruptFileError, FormatVersionError

PathLike = Union[str, Path]
DocumentT = TypeVar("DocumentT", bound="ArtifactDocument")

DUMP_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_APPEND_NEWLINE


class ArtifactDocument(BaseModel):
    """Common header of every keymark document."""

    model_config = ConfigDict(extra="forbid")

    format: str
    format_version: int


class HiddenLayerSerializer(BaseModel):
    model_config = ConfigDict(extra="forbid")

    width: int = Field(ge=1)
    activation: Literal["relu", "sigmoid", "tanh"]


class ModelSpecSerializer(BaseModel):
    model_config = ConfigDict(extra="forbid")

    input_dim: int = Field(ge=1)
    hidden_layers: List[HiddenLayerSerializer]
    num_classes: int = Field(ge=2)
    init_seed: int = Field(ge=0, lt=2**64)


class DenseLayerSerializer(BaseModel):
    """Row-major weights (fan_in rows of fan_out values) and biases."""

    model_config = ConfigDict(extra="forbid")

    weights: List[List[float]]
    biases: List[float]


class PreprocessingSerializer(BaseModel):
    model_config = ConfigDict(extra="forbid")

    feature_names: List[str]
    minimum: List[float]
    maximum: List[float]

    @field_validator("maximum")
    @classmethod
    def validate_lengths(cls, value, info):
        minimum = info.data.get("minimum")
        if minimum is not None and len(minimum) != len(value):
            raise ValueError("minimum and maximum have different lengths")
        return value


class CheckpointDocument(ArtifactDocument):
    format: Literal["keymark.checkpoint"] = "keymark.checkpoint"
    spec: ModelSpecSerializer
    trained_epochs: int = Field(ge=0)
    layers: List[DenseLayerSerializer]
    preprocessing: Optional[PreprocessingSerializer] = None


class KeyDocument(ArtifactDocument):
    format: Literal["keymark.key"] = "keymark.key"
    k: int = Field(ge=1)
    d: int = Field(ge=1)
    num_classes: int = Field(ge=2)
    samples: List[List[float]]
    labels: List[int]
    pool_indices: List[int]
    selection_rule: Literal["strict", "literal_eq4"]
    rng_seed: int = Field(ge=0, lt=2**64)
    model_fingerprint: Optional[str] = None
    fingerprint_algorithm: str
    key_digest: str
    created_at: str


class ReportDocument(ArtifactDocument):
    format: Literal["keymark.report"] = "keymark.report"
    report_type: str
    records: List[Dict[str, Any]]


def dumps_document(document: ArtifactDocument) -> bytes:
    """Serialize a document to canonical JSON bytes (sorted keys, 2-space indent)."""
    return orjson.dumps(document.model_dump(mode="json"), option=DUMP_OPTIONS)


def loads_document(
    payload: bytes,
    document_cls: Type[DocumentT],
    supported_version: int,
    path: Optional[PathLike] = None,
) -> DocumentT:
    """
    Parse and validate a document.

    Raises CorruptFileError for malformed content and FormatVersionError
    when the declared version is not the supported one. The version is
    checked before the schema so an unknown version is never reported as
    corruption.
    """
    try:
        raw = orjson.loads(payload)
    except orjson.JSONDecodeError as e:
        raise CorruptFileError(f"not a valid document ({e})", path) from e

    if not isinstance(raw, dict):
        raise CorruptFileError("document root must be an object", path)

    expected_format = document_cls.model_fields["format"].default
    if raw.get("format") != expected_format:
        raise CorruptFileError(f"expected a '{expected_format}' document", path)

    version = raw.get("format_version")
    if not isinstance(version, int) or isinstance(version, bool):
        raise CorruptFileError("missing or non-integer format_version", path)
    if version != supported_version:
        raise FormatVersionError(
            f"unsupported format_version {version} (supported: {supported_version})", path
        )

    try:
        return document_cls.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise CorruptFileError(f"invalid field '{location}': {first['msg']}", path) from e
