"""
Experiment harness.

Reproduces the watermark evaluations end to end:
- key-length sweep (task accuracy and shadow-model key accuracy per k)
- embedding-epoch sweep (shadow key accuracy per embedding epoch count)
- fine-tuning resilience (key accuracy while training on newer data)

The attacker's shadow model uses the same architecture and a disjoint
split of the same source. Every point is repeated over replicate seeds;
reported values are arithmetic means, per-replicate values are kept in
the structured report.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy import stats
from tqdm import tqdm

from .config import (
    DATA_DEFAULTS,
    HARNESS_DEFAULTS,
    NETWORK_DEFAULTS,
    REPORT_FORMAT_VERSION,
    VERIFY_DEFAULTS,
    WATERMARK_DEFAULTS,
)
from .data import (
    Dataset,
    NormalizationParams,
    SplitSpec,
    SyntheticKind,
    apply_minmax,
    fit_minmax,
    generate_synthetic,
    load_csv,
    split,
)
from .exceptions import ConfigError, KeymarkError
from .nn_core import (
    EpochRecord,
    Model,
    ModelSpec,
    TrainConfig,
    accuracy_on,
    default_spec,
    evaluate_accuracy,
    init_model,
    parse_arch,
    train,
)
from .serializers import ReportDocument, dumps_document, loads_document
from .utils import derive_seed, read_artifact, write_artifact
from .verify import Verdict, VerifyPolicy, verify
from .watermark import SelectionRule, WatermarkConfig, run_embedding_pipeline

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


# ----------------------------
# CONFIGURATION
# ----------------------------

class ExperimentConfig(BaseModel):
    """Flat experiment configuration; every key is optional."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    # Data source: a CSV file, or a synthetic generator when data_csv is unset
    data_csv: Optional[str] = None
    label_column: str = DATA_DEFAULTS["label_column"]
    num_classes: int = Field(default=DATA_DEFAULTS["num_classes"], ge=2)
    synthetic_kind: SyntheticKind = SyntheticKind.WATER_LIKE
    synthetic_n: int = Field(default=3276, ge=DATA_DEFAULTS["min_synthetic_rows"])

    # train / test / shadow / newer-data fractions
    split_train: float = Field(default=HARNESS_DEFAULTS["split_fractions"][0], gt=0)
    split_test: float = Field(default=HARNESS_DEFAULTS["split_fractions"][1], gt=0)
    split_shadow: float = Field(default=HARNESS_DEFAULTS["split_fractions"][2], gt=0)
    split_newer: float = Field(default=HARNESS_DEFAULTS["split_fractions"][3], gt=0)
    split_seed: int = Field(default=0, ge=0)
    seed: int = Field(default=0, ge=0)

    # Stage 1 (shared by the watermarked and the shadow model)
    application: Literal["water", "bus14"] = "water"
    hidden_layers: Optional[str] = None  # e.g. "32,relu:16,relu"; default per application
    train_epochs: int = Field(default=NETWORK_DEFAULTS["epochs"], ge=1)
    batch_size: int = Field(default=NETWORK_DEFAULTS["batch_size"], ge=1)
    learning_rate: float = Field(default=NETWORK_DEFAULTS["learning_rate"], gt=0)

    # Stage 2
    key_lengths: List[int] = Field(default=HARNESS_DEFAULTS["key_lengths"], min_length=1)
    pool_multiplier: int = Field(default=WATERMARK_DEFAULTS["pool_multiplier"], ge=1)
    embed_epochs: int = Field(default=WATERMARK_DEFAULTS["embed_epochs"], ge=1)
    epoch_sweep: List[int] = Field(default=HARNESS_DEFAULTS["epoch_sweep"], min_length=1)
    epoch_sweep_key_length: int = Field(default=HARNESS_DEFAULTS["epoch_sweep_key_length"], ge=1)
    selection_rules: List[SelectionRule] = Field(default=[SelectionRule.STRICT], min_length=1)

    # Fine-tuning resilience
    finetune_epochs: int = Field(default=HARNESS_DEFAULTS["finetune_epochs"], ge=1)
    finetune_lr_ratio: float = Field(default=HARNESS_DEFAULTS["finetune_lr_ratio"], gt=0)
    finetune_key_length: int = Field(default=WATERMARK_DEFAULTS["key_length"], ge=1)
    threshold: float = Field(default=VERIFY_DEFAULTS["threshold"], gt=0, le=1)

    replicates: int = Field(default=HARNESS_DEFAULTS["replicates"], ge=1)
    jobs: int = Field(default=HARNESS_DEFAULTS["jobs"], ge=1)

    @model_validator(mode="after")
    def validate_sweeps(self):
        if any(k < 1 for k in self.key_lengths):
            raise ValueError("key_lengths must be positive")
        if any(epochs < 1 for epochs in self.epoch_sweep):
            raise ValueError("epoch_sweep values must be positive")
        SplitSpec(self.split_fractions, self.split_seed)
        return self

    @property
    def split_fractions(self) -> Tuple[float, float, float, float]:
        return (self.split_train, self.split_test, self.split_shadow, self.split_newer)

    def train_config(self, shuffle_seed: int, epochs: Optional[int] = None,
                     learning_rate: Optional[float] = None) -> TrainConfig:
        return TrainConfig(
            epochs=self.train_epochs if epochs is None else epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate if learning_rate is None else learning_rate,
            shuffle_seed=shuffle_seed,
        )

    def build_spec(self, input_dim: int, init_seed: int) -> ModelSpec:
        if self.hidden_layers is None:
            return default_spec(self.application, input_dim, self.num_classes, init_seed)
        return parse_arch(f"{input_dim}:{self.hidden_layers}:{self.num_classes}", init_seed)


def load_experiment_config(path: PathLike, **overrides) -> ExperimentConfig:
    """
    Read a flat YAML key-value file. A relative data_csv is resolved against
    the config file's directory.
    """
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror or e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML ({e})") from e
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected flat key-value pairs at the top level")

    raw.update({key: value for key, value in overrides.items() if value is not None})
    if raw.get("data_csv"):
        csv_path = Path(raw["data_csv"])
        if not csv_path.is_absolute():
            raw["data_csv"] = str(path.parent / csv_path)
    return build_experiment_config(raw, source=str(path))


def build_experiment_config(raw: dict, source: str = "config") -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        location = ".".join(str(part) for part in first["loc"]) or "config"
        raise ConfigError(f"{source}: invalid '{location}': {first['msg']}") from e


# ----------------------------
# RECORDS
# ----------------------------

class ReplicateResult(BaseModel):
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    replicate: int
    seed: int
    model_accuracy: Optional[float] = None
    baseline_accuracy: Optional[float] = None
    shadow_key_accuracy: Optional[float] = None
    watermarked_key_accuracy: Optional[float] = None
    eligible_count: Optional[int] = None
    error: Optional[str] = None


class SweepRecord(BaseModel):
    """One sweep point; accuracies are replicate means (None when every replicate failed)."""

    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    k: int
    embed_epochs: int
    selection_rule: SelectionRule
    model_accuracy: Optional[float] = Field(default=None, ge=0, le=1)
    shadow_key_accuracy: Optional[float] = Field(default=None, ge=0, le=1)
    watermarked_key_accuracy: Optional[float] = Field(default=None, ge=0, le=1)
    succeeded: int = 0
    failed: int = 0
    replicates: List[ReplicateResult] = Field(default_factory=list)


class ResilienceRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    finetune_epochs_completed: int
    key_accuracy: float = Field(ge=0, le=1)
    task_accuracy: float = Field(ge=0, le=1)
    intact_replicates: int = 0
    key_accuracies: List[float] = Field(default_factory=list)
    task_accuracies: List[float] = Field(default_factory=list)


RECORD_TYPES = {"sweep": SweepRecord, "resilience": ResilienceRecord}


# ----------------------------
# DATA PREPARATION
# ----------------------------

@dataclass(frozen=True, eq=False)
class ExperimentData:
    """Min-Max normalized splits; extrema come from the train split only."""
    train: Dataset
    test: Dataset
    shadow: Dataset
    newer: Dataset
    normalization: NormalizationParams


def prepare_data(cfg: ExperimentConfig) -> ExperimentData:
    if cfg.data_csv:
        source = load_csv(cfg.data_csv, cfg.label_column, cfg.num_classes)
        logger.info(f"Loaded {source.n_samples} rows x {source.n_features} features from {cfg.data_csv}")
    else:
        source = generate_synthetic(cfg.synthetic_kind, cfg.synthetic_n, derive_seed(cfg.seed, "data"))
        logger.info(f"Generated {source.n_samples} synthetic rows ({cfg.synthetic_kind.value})")

    train_raw, test_raw, shadow_raw, newer_raw = split(source, SplitSpec(cfg.split_fractions, cfg.split_seed))
    if np.intersect1d(train_raw.row_ids, shadow_raw.row_ids).size:
        raise KeymarkError("shadow split shares rows with the training split")

    params = fit_minmax(train_raw)
    return ExperimentData(
        train=apply_minmax(train_raw, params),
        test=apply_minmax(test_raw, params),
        shadow=apply_minmax(shadow_raw, params),
        newer=apply_minmax(newer_raw, params),
        normalization=params,
    )


def replicate_seed(cfg: ExperimentConfig, replicate: int) -> int:
    return derive_seed(cfg.seed, "replicate", replicate)


def train_stage_one(data: ExperimentData, cfg: ExperimentConfig, replicate: int) -> Tuple[Model, Model]:
    """The owner's model (train split) and the attacker's shadow model (shadow split)."""
    seed = replicate_seed(cfg, replicate)
    d = data.train.n_features
    base, _ = train(
        init_model(cfg.build_spec(d, derive_seed(seed, "base-init"))),
        data.train,
        cfg.train_config(derive_seed(seed, "base-shuffle")),
    )
    shadow, _ = train(
        init_model(cfg.build_spec(d, derive_seed(seed, "shadow-init"))),
        data.shadow,
        cfg.train_config(derive_seed(seed, "shadow-shuffle")),
    )
    return base, shadow


def watermark_config(cfg: ExperimentConfig, seed: int, k: int, embed_epochs: int,
                      rule: SelectionRule) -> WatermarkConfig:
    return WatermarkConfig(
        key_length=k,
        pool_multiplier=cfg.pool_multiplier,
        embed_epochs=embed_epochs,
        selection_rule=rule,
        rng_seed=derive_seed(seed, "watermark", k, embed_epochs, rule.value),
        embed_train_cfg=cfg.train_config(shuffle_seed=0),
    )


def _run_point(data: ExperimentData, base: Model, shadow: Model, cfg: ExperimentConfig,
               replicate: int, k: int, embed_epochs: int, rule: SelectionRule) -> ReplicateResult:
    seed = replicate_seed(cfg, replicate)
    wcfg = watermark_config(cfg, seed, k, embed_epochs, rule)
    try:
        outcome = run_embedding_pipeline(base, data.train, data.test, wcfg)
    except KeymarkError as e:
        logger.warning(f"k={k}, epochs={embed_epochs}, rule={rule.value}, replicate {replicate}: {e}")
        return ReplicateResult(replicate=replicate, seed=seed, error=str(e))

    key = outcome.key
    return ReplicateResult(
        replicate=replicate,
        seed=seed,
        model_accuracy=outcome.accuracy_after,
        baseline_accuracy=outcome.accuracy_before,
        shadow_key_accuracy=accuracy_on(shadow, key.samples, key.labels),
        watermarked_key_accuracy=accuracy_on(outcome.watermarked_model, key.samples, key.labels),
        eligible_count=outcome.eligible_count,
    )


def _mean(values: Sequence[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def _run_sweep(cfg: ExperimentConfig, points: List[Tuple[int, int]], description: str,
               progress: bool) -> List[SweepRecord]:
    logger.info("=" * 70)
    logger.info(f"{description.upper()}: {len(points)} points x {len(cfg.selection_rules)} rules "
                f"x {cfg.replicates} replicates")
    logger.info("=" * 70)

    data = prepare_data(cfg)
    parallel = Parallel(n_jobs=cfg.jobs)
    stage_one = parallel(
        delayed(train_stage_one)(data, cfg, replicate) for replicate in range(cfg.replicates)
    )

    tasks = [
        (k, epochs, rule, replicate)
        for rule in cfg.selection_rules
        for k, epochs in points
        for replicate in range(cfg.replicates)
    ]
    results = parallel(
        delayed(_run_point)(data, *stage_one[replicate], cfg, replicate, k, epochs, rule)
        for k, epochs, rule, replicate in tqdm(tasks, desc=description, disable=not progress)
    )

    grouped: Dict[Tuple[str, int, int], List[ReplicateResult]] = defaultdict(list)
    for (k, epochs, rule, _), result in zip(tasks, results):
        grouped[(rule.value, k, epochs)].append(result)

    records = []
    for (rule, k, epochs), replicate_results in sorted(grouped.items()):
        replicate_results.sort(key=lambda r: r.replicate)
        succeeded = [r for r in replicate_results if r.error is None]
        records.append(SweepRecord(
            k=k,
            embed_epochs=epochs,
            selection_rule=SelectionRule(rule),
            model_accuracy=_mean([r.model_accuracy for r in succeeded]),
            shadow_key_accuracy=_mean([r.shadow_key_accuracy for r in succeeded]),
            watermarked_key_accuracy=_mean([r.watermarked_key_accuracy for r in succeeded]),
            succeeded=len(succeeded),
            failed=len(replicate_results) - len(succeeded),
            replicates=replicate_results,
        ))
    return records


def run_key_length_sweep(cfg: ExperimentConfig, progress: bool = False) -> List[SweepRecord]:
    """Task accuracy and shadow key accuracy for every key length in cfg.key_lengths."""
    points = [(k, cfg.embed_epochs) for k in cfg.key_lengths]
    return _run_sweep(cfg, points, "Key-length sweep", progress)


def run_epoch_sweep(cfg: ExperimentConfig, progress: bool = False) -> List[SweepRecord]:
    """Shadow key accuracy for every embedding epoch count at a fixed key length."""
    points = [(cfg.epoch_sweep_key_length, epochs) for epochs in cfg.epoch_sweep]
    return _run_sweep(cfg, points, "Embedding-epoch sweep", progress)


def shadow_trend(records: Sequence[SweepRecord]) -> float:
    """Spearman rank correlation between embed_epochs and mean shadow key accuracy (NaN if undefined)."""
    points = [(r.embed_epochs, r.shadow_key_accuracy) for r in records if r.shadow_key_accuracy is not None]
    if len(points) < 2:
        return float("nan")
    epochs, accuracies = zip(*points)
    if len(set(accuracies)) < 2 or len(set(epochs)) < 2:
        return float("nan")
    return float(stats.spearmanr(epochs, accuracies).statistic)


# ----------------------------
# FINE-TUNING RESILIENCE
# ----------------------------

def _resilience_trajectory(data: ExperimentData, cfg: ExperimentConfig,
                           replicate: int) -> Optional[List[Tuple[float, float, bool]]]:
    """(key accuracy, task accuracy, intact) after 0..finetune_epochs epochs, or None on failure."""
    seed = replicate_seed(cfg, replicate)
    base, _ = train(
        init_model(cfg.build_spec(data.train.n_features, derive_seed(seed, "base-init"))),
        data.train,
        cfg.train_config(derive_seed(seed, "base-shuffle")),
    )
    wcfg = watermark_config(cfg, seed, cfg.finetune_key_length, cfg.embed_epochs, cfg.selection_rules[0])
    try:
        outcome = run_embedding_pipeline(base, data.train, data.test, wcfg)
    except KeymarkError as e:
        logger.warning(f"resilience replicate {replicate}: {e}")
        return None

    key = outcome.key
    policy = VerifyPolicy(threshold=cfg.threshold)

    def checkpoint(model: Model) -> Tuple[float, float, bool]:
        report = verify(model, key, policy)
        return report.key_accuracy, evaluate_accuracy(model, data.test), report.verdict is Verdict.INTACT

    trajectory = [checkpoint(outcome.watermarked_model)]

    def on_epoch_end(epoch: int, snapshot: Model, record: EpochRecord):
        trajectory.append(checkpoint(snapshot))

    finetune_cfg = cfg.train_config(
        derive_seed(seed, "finetune-shuffle"),
        epochs=cfg.finetune_epochs,
        learning_rate=cfg.learning_rate * cfg.finetune_lr_ratio,
    )
    train(outcome.watermarked_model, data.newer, finetune_cfg, on_epoch_end=on_epoch_end)
    return trajectory


def run_finetune_resilience(cfg: ExperimentConfig, progress: bool = False) -> List[ResilienceRecord]:
    """
    Watermark a model, fine-tune it on the newer-data split and verify the
    key after every epoch. Returns finetune_epochs + 1 records (epoch 0 first).
    """
    logger.info("=" * 70)
    logger.info(f"FINE-TUNING RESILIENCE: {cfg.finetune_epochs} epochs at lr "
                f"{cfg.learning_rate * cfg.finetune_lr_ratio:g}, {cfg.replicates} replicates")
    logger.info("=" * 70)

    data = prepare_data(cfg)
    trajectories = Parallel(n_jobs=cfg.jobs)(
        delayed(_resilience_trajectory)(data, cfg, replicate)
        for replicate in tqdm(range(cfg.replicates), desc="Resilience", disable=not progress)
    )
    trajectories = [t for t in trajectories if t is not None]
    if not trajectories:
        raise KeymarkError("no replicate produced a watermarked model; raise pool_multiplier or embed_epochs")

    records = []
    for epoch in range(cfg.finetune_epochs + 1):
        key_accuracies = [t[epoch][0] for t in trajectories]
        task_accuracies = [t[epoch][1] for t in trajectories]
        records.append(ResilienceRecord(
            finetune_epochs_completed=epoch,
            key_accuracy=float(np.mean(key_accuracies)),
            task_accuracy=float(np.mean(task_accuracies)),
            intact_replicates=sum(1 for t in trajectories if t[epoch][2]),
            key_accuracies=key_accuracies,
            task_accuracies=task_accuracies,
        ))
    return records


# ----------------------------
# REPORTS
# ----------------------------

def _percent(value: Optional[float]) -> str:
    return "failed" if value is None else f"{value * 100:.2f}%"


def render_table(records: Sequence[BaseModel], report_type: str) -> str:
    """Plain-text table: one header line and one line per record."""
    if report_type == "sweep":
        header = ["Key length", "Embed epochs", "Rule", "Model Accuracy",
                  "Watermark detection accuracy for non-watermarked model",
                  "Watermarked key accuracy", "Replicates"]
        rows = [
            [str(r.k), str(r.embed_epochs), r.selection_rule.value, _percent(r.model_accuracy),
             _percent(r.shadow_key_accuracy), _percent(r.watermarked_key_accuracy),
             f"{r.succeeded}/{r.succeeded + r.failed}"]
            for r in records
        ]
    else:
        header = ["Fine-tune epochs", "Key accuracy", "Task accuracy", "Intact replicates"]
        rows = [
            [str(r.finetune_epochs_completed), _percent(r.key_accuracy), _percent(r.task_accuracy),
             f"{r.intact_replicates}/{len(r.key_accuracies)}"]
            for r in records
        ]
    widths = [max(len(cell) for cell in column) for column in zip(header, *rows)]
    lines = [" | ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip()
             for line in [header] + rows]
    return "\n".join(lines) + "\n"


def _report_type(records: Sequence[BaseModel], report_type: Optional[str]) -> str:
    if report_type is not None:
        if report_type not in RECORD_TYPES:
            raise ConfigError(f"unknown report type '{report_type}'")
        return report_type
    if records and isinstance(records[0], ResilienceRecord):
        return "resilience"
    return "sweep"


def emit_report(records: Sequence[BaseModel], path: PathLike,
                fmt: Literal["table_text", "structured"] = "structured",
                report_type: Optional[str] = None) -> Path:
    """Write records as a text table or as a structured JSON document."""
    report_type = _report_type(records, report_type)
    if fmt == "table_text":
        payload = render_table(records, report_type).encode("utf-8")
    elif fmt == "structured":
        document = ReportDocument(
            format_version=REPORT_FORMAT_VERSION,
            report_type=report_type,
            records=[record.model_dump(mode="json") for record in records],
        )
        payload = dumps_document(document)
    else:
        raise ConfigError(f"unknown report format '{fmt}'")
    return write_artifact(path, payload)


def load_report(path: PathLike) -> Tuple[str, List[BaseModel]]:
    """Read a structured sweep or resilience report back into records."""
    document = loads_document(read_artifact(path), ReportDocument, REPORT_FORMAT_VERSION, path)
    record_cls = RECORD_TYPES.get(document.report_type)
    if record_cls is None:
        raise ConfigError(f"{path}: not a sweep or resilience report ('{document.report_type}')")
    try:
        return document.report_type, [record_cls.model_validate(record) for record in document.records]
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid record ({e.errors()[0]['msg']})") from e
