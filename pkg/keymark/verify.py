"""
Integrity verification.

Stage 3: score a model on the secret Key dataset and issue a verdict.
Verification costs one forward evaluation of the k key rows; the model
is never retrained or re-hashed as part of the verdict. The checkpoint
fingerprint is reported alongside but is advisory only, since legitimate
further training changes it.
"""

import logging
from dataclasses import asdict, dataclass, replace
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .config import REPORT_FORMAT_VERSION, VERIFY_DEFAULTS
from .exceptions import InvalidPolicyError, ShapeError
from .nn_core import Model, loads_model, predict_labels
from .serializers import ReportDocument, dumps_document
from .utils import compute_digest, read_artifact, write_artifact
from .watermark import KeyDataset, load_key

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class Verdict(str, Enum):
    INTACT = "intact"
    TAMPERED = "tampered"


class FingerprintStatus(str, Enum):
    MATCH = "match"
    MISMATCH = "mismatch"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class VerifyPolicy:
    threshold: float = VERIFY_DEFAULTS["threshold"]

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0:
            raise InvalidPolicyError(f"threshold must lie in (0, 1], got {self.threshold}")

    def check_against(self, key: KeyDataset):
        """The threshold must sit strictly above the key's chance level."""
        if self.threshold <= key.chance_level:
            raise InvalidPolicyError(
                f"threshold {self.threshold} does not exceed chance level {key.chance_level:.4f} "
                f"for a {key.num_classes}-class key"
            )


@dataclass(frozen=True)
class WatermarkReport:
    key_accuracy: float
    matches: int
    k: int
    chance_level: float
    threshold: float
    verdict: Verdict
    model_fingerprint_match: FingerprintStatus
    model_path: Optional[str] = None

    @property
    def exit_code(self) -> int:
        return 0 if self.verdict is Verdict.INTACT else 1

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload["verdict"] = self.verdict.value
        payload["model_fingerprint_match"] = self.model_fingerprint_match.value
        return payload


def verify(model: Model, key: KeyDataset, policy: VerifyPolicy = VerifyPolicy(),
           checkpoint_digest: Optional[str] = None) -> WatermarkReport:
    """Key accuracy of the model and the resulting intact/tampered verdict."""
    if model.spec.input_dim != key.d:
        raise ShapeError(f"model expects {model.spec.input_dim} features, key has {key.d}")
    if model.spec.num_classes != key.num_classes:
        raise ShapeError(f"model has {model.spec.num_classes} classes, key has {key.num_classes}")
    policy.check_against(key)

    matches = int(np.sum(predict_labels(model, key.samples) == key.labels))
    key_accuracy = matches / key.k

    if checkpoint_digest is None or key.model_fingerprint is None:
        fingerprint = FingerprintStatus.UNKNOWN
    elif checkpoint_digest == key.model_fingerprint:
        fingerprint = FingerprintStatus.MATCH
    else:
        fingerprint = FingerprintStatus.MISMATCH

    verdict = Verdict.INTACT if key_accuracy >= policy.threshold else Verdict.TAMPERED
    return WatermarkReport(
        key_accuracy=key_accuracy,
        matches=matches,
        k=key.k,
        chance_level=key.chance_level,
        threshold=policy.threshold,
        verdict=verdict,
        model_fingerprint_match=fingerprint,
    )


def verify_from_files(model_path: PathLike, key_path: PathLike,
                      policy: VerifyPolicy = VerifyPolicy()) -> WatermarkReport:
    """Load a checkpoint and a key file and verify; the fingerprint is taken over the checkpoint bytes."""
    key = load_key(key_path)
    payload = read_artifact(model_path)
    model = loads_model(payload, model_path)
    digest = compute_digest(payload, key.fingerprint_algorithm)
    report = verify(model, key, policy, checkpoint_digest=digest)
    logger.info(
        f"{model_path}: key accuracy {report.key_accuracy:.4f} ({report.matches}/{report.k}), "
        f"verdict {report.verdict.value}, fingerprint {report.model_fingerprint_match.value}"
    )
    return replace(report, model_path=str(model_path))


def monitor_checkpoints(model_paths: Sequence[PathLike], key_path: PathLike,
                        policy: VerifyPolicy = VerifyPolicy()) -> List[WatermarkReport]:
    """Verify a series of checkpoints (e.g. successive retraining snapshots) against one key."""
    return [verify_from_files(path, key_path, policy) for path in model_paths]


def render_report(report: WatermarkReport) -> str:
    lines = [
        f"verdict:            {report.verdict.value}",
        f"key accuracy:       {report.key_accuracy:.4f} ({report.matches}/{report.k})",
        f"threshold:          {report.threshold:.4f}",
        f"chance level:       {report.chance_level:.4f}",
        f"fingerprint:        {report.model_fingerprint_match.value}",
    ]
    if report.model_path:
        lines.insert(0, f"model:              {report.model_path}")
    return "\n".join(lines)


def write_report(reports: Union[WatermarkReport, Sequence[WatermarkReport]], path: PathLike) -> Path:
    """Structured verification report (one record per verified model)."""
    if isinstance(reports, WatermarkReport):
        reports = [reports]
    document = ReportDocument(
        format_version=REPORT_FORMAT_VERSION,
        report_type="verification",
        records=[report.to_dict() for report in reports],
    )
    return write_artifact(path, dumps_document(document))
