"""
Utility functions shared by the pipeline stages:
content fingerprints, seed derivation, timestamps and artifact file I/O.
"""

import hashlib
import zlib
from datetime import datetime, timezone
from pathlib import Path
from typing import Union

import numpy as np

from .config import VERIFY_DEFAULTS, get_settings
from .exceptions import ArtifactIOError

PathLike = Union[str, Path]


def compute_digest(payload: bytes, algorithm: str = VERIFY_DEFAULTS["fingerprint_algorithm"]) -> str:
    """Hex digest of a binary payload."""
    return hashlib.new(algorithm, payload).hexdigest()


def derive_seed(base_seed: int, *tags) -> int:
    """
    Derive an independent 64-bit seed from a base seed and a sequence of tags.

    Tags may be ints or strings; strings are folded with CRC32 so the
    result does not depend on Python's per-process hash randomization.
    """
    entropy = [int(base_seed) & 0xFFFFFFFFFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            entropy.append(zlib.crc32(tag.encode("utf-8")))
        else:
            entropy.append(int(tag) & 0xFFFFFFFFFFFFFFFF)
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; the only PRNG used anywhere in keymark."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def utc_timestamp() -> str:
    """ISO-8601 UTC timestamp, pinned by SOURCE_DATE_EPOCH when set."""
    epoch = get_settings().source_date_epoch
    if epoch is not None:
        moment = datetime.fromtimestamp(epoch, tz=timezone.utc)
    else:
        moment = datetime.now(tz=timezone.utc)
    return moment.replace(microsecond=0).isoformat()


def read_artifact(path: PathLike) -> bytes:
    """Read an artifact file, mapping OS errors to ArtifactIOError."""
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise ArtifactIOError(e.strerror or str(e), path) from e


def write_artifact(path: PathLike, payload: bytes) -> Path:
    """Write an artifact file, creating parent directories."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as e:
        raise ArtifactIOError(e.strerror or str(e), path) from e
    return path
