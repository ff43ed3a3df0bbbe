"""
Watermark embedding and Key dataset generation.

Stage 2 of the integrity mechanism:
1. Draw a candidate pool R of l = k * C Gaussian samples inside [0, 1]^d
   and give every sample a random label Y^R
2. Record the trained model's predictions on R (Y^MI)
3. Embed: continue training on the original training data plus (R, Y^R)
4. Record the watermarked model's predictions on R (Y^MA)
5. Select k eligible samples as the secret Key dataset
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .config import KEY_FORMAT_VERSION, VERIFY_DEFAULTS, WATERMARK_DEFAULTS
from .data import Dataset, concat
from .exceptions import (
    CorruptFileError,
    InsufficientCandidatesError,
    KeyIntegrityError,
    LabelRangeError,
    PipelineStateError,
    ShapeError,
    ShapeMismatchError,
    ValidationError,
    WatermarkInvariantError,
)
from .nn_core import Model, TrainConfig, accuracy_on, dumps_model, evaluate_accuracy, predict_labels, train
from .serializers import KeyDocument, dumps_document, loads_document
from .utils import compute_digest, derive_seed, make_rng, read_artifact, utc_timestamp, write_artifact

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class SelectionRule(str, Enum):
    # watermarked model agrees with Y^R and the pre-embedding model does not
    STRICT = "strict"
    # pre- and post-embedding predictions agree (verbatim set-intersection reading)
    LITERAL_EQ4 = "literal_eq4"


class PredictionStage(str, Enum):
    PRE = "pre"
    POST = "post"


@dataclass(frozen=True)
class WatermarkConfig:
    key_length: int = WATERMARK_DEFAULTS["key_length"]
    pool_multiplier: int = WATERMARK_DEFAULTS["pool_multiplier"]
    embed_epochs: int = WATERMARK_DEFAULTS["embed_epochs"]
    selection_rule: SelectionRule = SelectionRule(WATERMARK_DEFAULTS["selection_rule"])
    rng_seed: int = WATERMARK_DEFAULTS["rng_seed"]
    embed_train_cfg: TrainConfig = field(default_factory=TrainConfig)
    candidate_mean: float = WATERMARK_DEFAULTS["candidate_mean"]
    candidate_std: float = WATERMARK_DEFAULTS["candidate_std"]

    def __post_init__(self):
        object.__setattr__(self, "selection_rule", SelectionRule(self.selection_rule))
        if self.key_length < 1:
            raise ValidationError(f"key_length must be >= 1, got {self.key_length}")
        if self.pool_multiplier < 1:
            raise ValidationError(f"pool_multiplier must be >= 1, got {self.pool_multiplier}")
        if self.embed_epochs < 0:
            raise ValidationError(f"embed_epochs must be >= 0, got {self.embed_epochs}")
        if not 0.0 <= self.candidate_mean <= 1.0 or self.candidate_std <= 0:
            raise ValidationError("candidate_mean must lie in [0, 1] and candidate_std must be > 0")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValidationError(f"rng_seed must be a 64-bit unsigned integer, got {self.rng_seed}")

    @property
    def pool_size(self) -> int:
        return self.key_length * self.pool_multiplier


@dataclass(frozen=True, eq=False)
class CandidatePool:
    """Random samples R with assigned labels Y^R and the recorded predictions."""
    samples: np.ndarray  # l x d, entries in [0, 1]
    assigned_labels: np.ndarray  # Y^R
    num_classes: int
    pre_predictions: Optional[np.ndarray] = None  # Y^MI
    post_predictions: Optional[np.ndarray] = None  # Y^MA

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64, copy=True)
        labels = np.array(self.assigned_labels, dtype=np.int64, copy=True)
        if samples.ndim != 2 or labels.shape != (samples.shape[0],):
            raise ShapeError("pool samples must be l x d with l assigned labels")
        if np.any(samples < 0.0) or np.any(samples > 1.0) or not np.all(np.isfinite(samples)):
            raise ValidationError("pool samples must lie in [0, 1]")
        if np.any(labels < 0) or np.any(labels >= self.num_classes):
            raise LabelRangeError(f"assigned labels must lie in [0, {self.num_classes})")
        arrays = {"samples": samples, "assigned_labels": labels}
        for name in ("pre_predictions", "post_predictions"):
            value = getattr(self, name)
            if value is not None:
                value = np.array(value, dtype=np.int64, copy=True)
                if value.shape != labels.shape:
                    raise ShapeError(f"{name} must have {labels.shape[0]} entries")
                arrays[name] = value
        for name, array in arrays.items():
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    @property
    def n_features(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True, eq=False)
class KeyDataset:
    """The k secret (sample, label) pairs plus provenance."""
    samples: np.ndarray  # k x d
    labels: np.ndarray  # k
    num_classes: int
    selection_rule: SelectionRule
    rng_seed: int
    pool_indices: np.ndarray  # where each key row sat in the candidate pool
    model_fingerprint: Optional[str] = None
    fingerprint_algorithm: str = VERIFY_DEFAULTS["fingerprint_algorithm"]
    created_at: str = ""
    format_version: int = KEY_FORMAT_VERSION

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True)
        pool_indices = np.array(self.pool_indices, dtype=np.int64, copy=True)
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise ShapeError("key samples must be a non-empty k x d matrix")
        k = samples.shape[0]
        if labels.shape != (k,) or pool_indices.shape != (k,):
            raise ShapeError(f"key needs {k} labels and {k} pool indices")
        if np.any(samples < 0.0) or np.any(samples > 1.0) or not np.all(np.isfinite(samples)):
            raise ValidationError("key samples must lie in [0, 1]")
        if np.any(labels < 0) or np.any(labels >= self.num_classes):
            raise LabelRangeError(f"key labels must lie in [0, {self.num_classes})")
        if len(np.unique(pool_indices)) != k:
            raise ValidationError("key contains duplicate pool indices")
        for array in (samples, labels, pool_indices):
            array.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "pool_indices", pool_indices)
        object.__setattr__(self, "selection_rule", SelectionRule(self.selection_rule))

    @property
    def k(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    @property
    def chance_level(self) -> float:
        return 1.0 / self.num_classes

    @property
    def key_digest(self) -> str:
        """Digest of the canonical (shape, samples, labels) payload."""
        header = np.array([self.k, self.d, self.num_classes], dtype="<i8").tobytes()
        payload = header + self.samples.astype("<f8").tobytes() + self.labels.astype("<i8").tobytes()
        return compute_digest(payload, self.fingerprint_algorithm)

    def with_fingerprint(self, fingerprint: str) -> "KeyDataset":
        return replace(self, model_fingerprint=fingerprint)


@dataclass(frozen=True, eq=False)
class EmbedOutcome:
    watermarked_model: Model
    pre_embedding_model: Model
    key: KeyDataset
    pool: CandidatePool  # retained for audit
    accuracy_before: float  # original test split
    accuracy_after: float
    eligible_count: int


# ----------------------------
# PIPELINE STAGES
# ----------------------------

def generate_candidates(
    k: int,
    C: int,
    d: int,
    num_classes: int,
    seed: int,
    mean: float = WATERMARK_DEFAULTS["candidate_mean"],
    std: float = WATERMARK_DEFAULTS["candidate_std"],
) -> CandidatePool:
    """
    l = k * C samples, entries ~ Gaussian(mean, std) clamped to [0, 1],
    labels uniform over the classes.
    """
    if k < 1 or C < 1 or d < 1:
        raise ValidationError(f"k, C and d must be >= 1, got k={k}, C={C}, d={d}")
    if num_classes < 2:
        raise ValidationError(f"num_classes must be >= 2, got {num_classes}")
    pool_size = k * C
    if pool_size * d > WATERMARK_DEFAULTS["max_pool_cells"]:
        raise ValidationError(f"pool of {k} x {C} samples with {d} features is too large")

    rng = make_rng(seed)
    samples = np.clip(rng.normal(mean, std, size=(pool_size, d)), 0.0, 1.0)
    labels = rng.integers(0, num_classes, size=pool_size)
    return CandidatePool(samples=samples, assigned_labels=labels, num_classes=num_classes)


def record_predictions(model: Model, pool: CandidatePool, which: Union[PredictionStage, str]) -> CandidatePool:
    """Fill Y^MI (pre) or Y^MA (post) with the model's predicted labels on R."""
    which = PredictionStage(which)
    if model.spec.input_dim != pool.n_features:
        raise ShapeError(f"model expects {model.spec.input_dim} features, pool has {pool.n_features}")
    predictions = predict_labels(model, pool.samples)
    if which is PredictionStage.PRE:
        return replace(pool, pre_predictions=predictions)
    return replace(pool, post_predictions=predictions)


def embed(model: Model, original_train: Dataset, pool: CandidatePool, cfg: WatermarkConfig) -> Model:
    """Train on O + (R, Y^R) for cfg.embed_epochs; the input model is left untouched."""
    if pool.pre_predictions is None:
        raise PipelineStateError("record pre-embedding predictions (Y^MI) before embedding")
    if not (model.spec.input_dim == original_train.n_features == pool.n_features):
        raise ShapeError(
            f"dimension mismatch: model {model.spec.input_dim}, data {original_train.n_features}, "
            f"pool {pool.n_features}"
        )
    if original_train.n_samples < WATERMARK_DEFAULTS["dataset_to_key_ratio"] * cfg.key_length:
        logger.warning(
            f"Original dataset has {original_train.n_samples} rows, fewer than "
            f"{WATERMARK_DEFAULTS['dataset_to_key_ratio']} x key length ({cfg.key_length})"
        )

    candidates = Dataset(
        features=pool.samples,
        labels=pool.assigned_labels,
        feature_names=original_train.feature_names,
        num_classes=original_train.num_classes,
    )
    combined = concat(original_train, candidates)
    train_cfg = cfg.embed_train_cfg.with_(
        epochs=cfg.embed_epochs,
        shuffle_seed=derive_seed(cfg.rng_seed, "embed"),
    )
    logger.info(
        f"Embedding {pool.size} candidates into {original_train.n_samples} training rows "
        f"for {cfg.embed_epochs} epochs"
    )
    watermarked, _ = train(model, combined, train_cfg)
    return watermarked


def eligible_indices(pool: CandidatePool, rule: Union[SelectionRule, str]) -> np.ndarray:
    """Pool indices satisfying the selection predicate, ascending."""
    rule = SelectionRule(rule)
    if pool.pre_predictions is None or pool.post_predictions is None:
        raise PipelineStateError("both Y^MI and Y^MA must be recorded before key selection")
    if rule is SelectionRule.STRICT:
        mask = (pool.post_predictions == pool.assigned_labels) & (pool.pre_predictions != pool.assigned_labels)
    else:
        mask = pool.pre_predictions == pool.post_predictions
    return np.flatnonzero(mask)


def select_key(pool: CandidatePool, k: int, rule: Union[SelectionRule, str], seed: int) -> KeyDataset:
    """Sample k eligible indices uniformly without replacement; labels are Y^R."""
    rule = SelectionRule(rule)
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    eligible = eligible_indices(pool, rule)
    if len(eligible) < k:
        raise InsufficientCandidatesError(eligible=len(eligible), required=k)

    chosen = make_rng(seed).choice(eligible, size=k, replace=False)
    return KeyDataset(
        samples=pool.samples[chosen],
        labels=pool.assigned_labels[chosen],
        num_classes=pool.num_classes,
        selection_rule=rule,
        rng_seed=seed,
        pool_indices=chosen,
        created_at=utc_timestamp(),
    )


def _check_key_predicate(model: Model, watermarked: Model, key: KeyDataset):
    if key.selection_rule is SelectionRule.STRICT:
        if accuracy_on(watermarked, key.samples, key.labels) != 1.0:
            raise WatermarkInvariantError("watermarked model does not reproduce its own key")
        if accuracy_on(model, key.samples, key.labels) != 0.0:
            raise WatermarkInvariantError("pre-embedding model matches key labels under the strict rule")
    elif not np.array_equal(predict_labels(model, key.samples), predict_labels(watermarked, key.samples)):
        raise WatermarkInvariantError("key rows changed prediction during embedding under the literal_eq4 rule")


def run_embedding_pipeline(model: Model, train_data: Dataset, test_data: Dataset,
                           cfg: WatermarkConfig) -> EmbedOutcome:
    """
    generate_candidates -> record pre -> embed -> record post -> select_key.

    The freshly selected key is checked against its selection predicate.
    Under the strict rule the watermarked model scores 1.0 on it and the
    pre-embedding model scores 0.0; under literal_eq4 both models predict
    the same label on every key row.
    """
    if model.trained_epochs == 0:
        raise PipelineStateError("the model must be trained (stage 1) before embedding a watermark")

    logger.info("=" * 70)
    logger.info(f"WATERMARK EMBEDDING: k={cfg.key_length}, C={cfg.pool_multiplier}, "
                f"epochs={cfg.embed_epochs}, rule={cfg.selection_rule.value}")
    logger.info("=" * 70)

    accuracy_before = evaluate_accuracy(model, test_data)
    pool = generate_candidates(
        cfg.key_length,
        cfg.pool_multiplier,
        train_data.n_features,
        model.spec.num_classes,
        derive_seed(cfg.rng_seed, "candidates"),
        cfg.candidate_mean,
        cfg.candidate_std,
    )
    pool = record_predictions(model, pool, PredictionStage.PRE)
    watermarked = embed(model, train_data, pool, cfg)
    pool = record_predictions(watermarked, pool, PredictionStage.POST)
    eligible_count = len(eligible_indices(pool, cfg.selection_rule))
    logger.info(f"Eligible candidates |W| = {eligible_count} of {pool.size}")

    key = select_key(pool, cfg.key_length, cfg.selection_rule, derive_seed(cfg.rng_seed, "selection"))
    key = key.with_fingerprint(compute_digest(dumps_model(watermarked), key.fingerprint_algorithm))

    _check_key_predicate(model, watermarked, key)

    accuracy_after = evaluate_accuracy(watermarked, test_data)
    logger.info(f"Test accuracy before: {accuracy_before:.4f}, after: {accuracy_after:.4f}")
    return EmbedOutcome(
        watermarked_model=watermarked,
        pre_embedding_model=model,
        key=key,
        pool=pool,
        accuracy_before=accuracy_before,
        accuracy_after=accuracy_after,
        eligible_count=eligible_count,
    )


# ----------------------------
# KEY FILES
# ----------------------------

def dumps_key(key: KeyDataset) -> bytes:
    document = KeyDocument(
        format_version=key.format_version,
        k=key.k,
        d=key.d,
        num_classes=key.num_classes,
        samples=key.samples.tolist(),
        labels=key.labels.tolist(),
        pool_indices=key.pool_indices.tolist(),
        selection_rule=key.selection_rule.value,
        rng_seed=key.rng_seed,
        model_fingerprint=key.model_fingerprint,
        fingerprint_algorithm=key.fingerprint_algorithm,
        key_digest=key.key_digest,
        created_at=key.created_at,
    )
    return dumps_document(document)


def loads_key(payload: bytes, path: Optional[PathLike] = None) -> KeyDataset:
    document = loads_document(payload, KeyDocument, KEY_FORMAT_VERSION, path)
    k, d = document.k, document.d
    if len(document.samples) != k or any(len(row) != d for row in document.samples):
        raise ShapeMismatchError(f"samples are not {k} x {d}", path)
    if len(document.labels) != k or len(document.pool_indices) != k:
        raise ShapeMismatchError(f"expected {k} labels and {k} pool indices", path)

    try:
        key = KeyDataset(
            samples=np.array(document.samples, dtype=np.float64).reshape(k, d),
            labels=document.labels,
            num_classes=document.num_classes,
            selection_rule=document.selection_rule,
            rng_seed=document.rng_seed,
            pool_indices=document.pool_indices,
            model_fingerprint=document.model_fingerprint,
            fingerprint_algorithm=document.fingerprint_algorithm,
            created_at=document.created_at,
            format_version=document.format_version,
        )
    except (ValidationError, ShapeError) as e:
        raise KeyIntegrityError(str(e), path) from e
    except ValueError as e:
        raise CorruptFileError(str(e), path) from e

    try:
        digest = key.key_digest
    except ValueError as e:
        raise CorruptFileError(f"unknown digest algorithm '{key.fingerprint_algorithm}'", path) from e
    if digest != document.key_digest:
        raise KeyIntegrityError("key content does not match its recorded digest", path)
    return key


def save_key(key: KeyDataset, path: PathLike) -> Path:
    return write_artifact(path, dumps_key(key))


def load_key(path: PathLike) -> KeyDataset:
    return loads_key(read_artifact(path), path)
