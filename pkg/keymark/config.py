"""
Keymark Configuration

Defaults for every stage of the integrity watermarking workflow:
- Stage 1: regular training of the feed-forward classifier
- Stage 2: watermark embedding and Key dataset generation
- Stage 3: integrity verification against the Key dataset
- Experiment harness (key-length / embedding-epoch sweeps, fine-tuning)

Runtime settings (log level, log file, reproducible timestamps) come from
the environment (prefix KEYMARK_) or a local .env file.
"""

from functools import lru_cache
from typing import Optional

from pydantic import AliasChoices, Field
from pydantic_settings import BaseSettings, SettingsConfigDict

# =============================================================================
# NETWORK DEFAULTS
# =============================================================================
NETWORK_DEFAULTS = {
    # Hidden layers as (width, activation); input and output dims come from data
    "architectures": {
        "water": [(32, "relu"), (16, "relu")],
        "bus14": [(64, "relu"), (32, "relu")],
    },
    "init_seed": 42,

    # Optimizer
    "optimizer": "adam",
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "adam_eps": 1e-8,
    "learning_rate": 1e-3,
    "batch_size": 32,
    "epochs": 100,
    "shuffle_seed": 0,
}

# =============================================================================
# DATA DEFAULTS
# =============================================================================
DATA_DEFAULTS = {
    # Strings treated as a missing cell when reading CSV files
    "missing_markers": ["", "NA"],
    "impute_missing": True,
    "label_column": "label",
    "num_classes": 2,

    # Synthetic generators
    "min_synthetic_rows": 10,
    "bus14_anomaly_rate": 0.10,
}

# =============================================================================
# WATERMARK DEFAULTS
# =============================================================================
WATERMARK_DEFAULTS = {
    "key_length": 50,
    "pool_multiplier": 20,  # C in l = k * C
    "embed_epochs": 30,
    "selection_rule": "strict",
    "rng_seed": 0,

    # Candidate samples: Gaussian, clamped to the normalized range [0, 1]
    "candidate_mean": 0.5,
    "candidate_std": 0.15,

    # Original dataset should be this many times larger than the key
    "dataset_to_key_ratio": 1000,

    # Upper bound on pool cells (l * d) before generation is refused
    "max_pool_cells": 2**31 - 1,
}

# =============================================================================
# VERIFY DEFAULTS
# =============================================================================
VERIFY_DEFAULTS = {
    "threshold": 0.90,
    "fingerprint_algorithm": "sha256",
}

# =============================================================================
# HARNESS DEFAULTS
# =============================================================================
HARNESS_DEFAULTS = {
    # train / test / shadow / newer-data
    "split_fractions": (0.4, 0.1, 0.4, 0.1),
    "key_lengths": list(range(10, 101, 10)),
    "epoch_sweep": [5, 10, 20, 40, 80],
    "epoch_sweep_key_length": 50,
    "replicates": 5,
    "finetune_epochs": 10,
    "finetune_lr_ratio": 0.1,
    "jobs": 1,
}

# =============================================================================
# FILE FORMATS
# =============================================================================
CHECKPOINT_FORMAT_VERSION = 1
KEY_FORMAT_VERSION = 1
REPORT_FORMAT_VERSION = 1

# =============================================================================
# LOGGING
# =============================================================================
LOGGING_CONFIG = {
    "level": "INFO",
    "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    "file": None,
}


class Settings(BaseSettings):
    """Environment-driven runtime settings."""

    model_config = SettingsConfigDict(
        env_prefix="KEYMARK_",
        env_file=".env",
        extra="ignore",
    )

    log_level: str = LOGGING_CONFIG["level"]
    log_format: str = LOGGING_CONFIG["format"]
    log_file: Optional[str] = LOGGING_CONFIG["file"]
    default_jobs: int = HARNESS_DEFAULTS["jobs"]

    # Fixed clock for created_at fields (reproducible artifacts)
    source_date_epoch: Optional[int] = Field(
        default=None,
        validation_alias=AliasChoices("KEYMARK_SOURCE_DATE_EPOCH", "SOURCE_DATE_EPOCH"),
    )


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Load settings once per process."""
    return Settings()
