"""Small, fast fixtures shared by the test modules."""

import numpy as np

from keymark.data import Dataset, split, SplitSpec
from keymark.nn_core import ModelSpec, TrainConfig, init_model, train
from keymark.utils import make_rng
from keymark.watermark import SelectionRule, WatermarkConfig

FAST_TRAIN = TrainConfig(epochs=20, batch_size=32, learning_rate=1e-2, shuffle_seed=3)


def toy_dataset(n: int = 400, d: int = 4, seed: int = 0) -> Dataset:
    """Features in [0, 1]; label is 1 when the first two features sum past 1."""
    rng = make_rng(seed)
    features = rng.uniform(0.0, 1.0, size=(n, d))
    labels = (features[:, 0] + features[:, 1] > 1.0).astype(np.int64)
    return Dataset(
        features=features,
        labels=labels,
        feature_names=tuple(f"f{i}" for i in range(d)),
        num_classes=2,
    )


def toy_splits(n: int = 500, d: int = 4, seed: int = 0):
    return split(toy_dataset(n, d, seed), SplitSpec((0.8, 0.2), seed))


def toy_spec(d: int = 4, width: int = 32, init_seed: int = 7) -> ModelSpec:
    return ModelSpec(input_dim=d, hidden_layers=((width, "relu"),), num_classes=2, init_seed=init_seed)


def trained_toy_model(data: Dataset, init_seed: int = 7):
    model, _ = train(init_model(toy_spec(data.n_features, init_seed=init_seed)), data, FAST_TRAIN)
    return model


def toy_watermark_config(k: int = 5, rule: SelectionRule = SelectionRule.STRICT, seed: int = 11) -> WatermarkConfig:
    return WatermarkConfig(
        key_length=k,
        pool_multiplier=60,
        embed_epochs=60,
        selection_rule=rule,
        rng_seed=seed,
        embed_train_cfg=TrainConfig(batch_size=32, learning_rate=1e-2),
    )
