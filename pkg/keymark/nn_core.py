"""
Feed-forward network engine.

A small, deterministic dense-network implementation on numpy (64-bit
floats throughout): Glorot-uniform initialization from a seeded PCG64
generator, softmax cross-entropy, analytic backpropagation, mini-batch
SGD/Adam training and versioned JSON checkpoints.
"""

import logging
import math
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .config import CHECKPOINT_FORMAT_VERSION, NETWORK_DEFAULTS
from .data import Dataset, NormalizationParams, minmax_transform
from .exceptions import (
    CorruptFileError,
    KeymarkError,
    LabelRangeError,
    NumericalInstabilityError,
    ShapeError,
    ShapeMismatchError,
    SpecValidationError,
    ValidationError,
)
from .serializers import (
    CheckpointDocument,
    DenseLayerSerializer,
    HiddenLayerSerializer,
    ModelSpecSerializer,
    PreprocessingSerializer,
    dumps_document,
    loads_document,
)
from .utils import make_rng, read_artifact, write_artifact

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class Activation(str, Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"


def _relu(z):
    return np.maximum(z, 0.0)


def _sigmoid(z):
    # exp of a non-positive argument only, for both signs of z
    out = np.empty_like(z)
    positive = z >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
    exp_z = np.exp(z[~positive])
    out[~positive] = exp_z / (1.0 + exp_z)
    return out


# activation -> (function, derivative given pre-activation z and output a)
ACTIVATIONS = {
    Activation.RELU: (_relu, lambda z, a: (z > 0).astype(np.float64)),
    Activation.SIGMOID: (_sigmoid, lambda z, a: a * (1.0 - a)),
    Activation.TANH: (np.tanh, lambda z, a: 1.0 - a * a),
}


# ----------------------------
# SPEC AND PARAMETERS
# ----------------------------

@dataclass(frozen=True)
class HiddenLayer:
    width: int
    activation: Activation = Activation.RELU

    def __post_init__(self):
        try:
            activation = Activation(self.activation)
        except ValueError:
            raise SpecValidationError(
                f"unknown activation '{self.activation}' (choose from relu, sigmoid, tanh)"
            ) from None
        if not isinstance(self.width, (int, np.integer)) or self.width < 1:
            raise SpecValidationError(f"hidden width must be a positive integer, got {self.width!r}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "activation", activation)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of a dense classifier: input_dim -> hidden layers -> num_classes."""
    input_dim: int
    hidden_layers: Tuple[HiddenLayer, ...]
    num_classes: int
    init_seed: int = NETWORK_DEFAULTS["init_seed"]

    def __post_init__(self):
        layers = []
        for layer in self.hidden_layers:
            if isinstance(layer, HiddenLayer):
                layers.append(layer)
            elif isinstance(layer, dict):
                layers.append(HiddenLayer(**layer))
            else:
                layers.append(HiddenLayer(*layer))
        if not isinstance(self.input_dim, (int, np.integer)) or self.input_dim < 1:
            raise SpecValidationError(f"input_dim must be >= 1, got {self.input_dim!r}")
        if not isinstance(self.num_classes, (int, np.integer)) or self.num_classes < 2:
            raise SpecValidationError(f"num_classes must be >= 2, got {self.num_classes!r}")
        if not 0 <= int(self.init_seed) < 2**64:
            raise SpecValidationError(f"init_seed must be a 64-bit unsigned integer, got {self.init_seed!r}")
        object.__setattr__(self, "hidden_layers", tuple(layers))
        object.__setattr__(self, "input_dim", int(self.input_dim))
        object.__setattr__(self, "num_classes", int(self.num_classes))
        object.__setattr__(self, "init_seed", int(self.init_seed))

    def layer_shapes(self) -> List[Tuple[int, int]]:
        """(fan_in, fan_out) of every dense layer, output layer last."""
        widths = [self.input_dim] + [layer.width for layer in self.hidden_layers] + [self.num_classes]
        return list(zip(widths[:-1], widths[1:]))

    @property
    def activations(self) -> Tuple[Activation, ...]:
        return tuple(layer.activation for layer in self.hidden_layers)

    def to_arch_string(self) -> str:
        hidden = [f"{layer.width},{layer.activation.value}" for layer in self.hidden_layers]
        return ":".join([str(self.input_dim)] + hidden + [str(self.num_classes)])


def parse_arch(arch: str, init_seed: int = NETWORK_DEFAULTS["init_seed"]) -> ModelSpec:
    """
    Parse an architecture string "d:w1,act1:w2,act2:c".

    Example: "9:32,relu:16,relu:2" is 9 inputs, two ReLU layers, 2 classes.
    """
    segments = arch.strip().split(":")
    if len(segments) < 2:
        raise SpecValidationError(f"architecture '{arch}' needs at least 'input_dim:num_classes'")
    for position, segment in enumerate(segments):
        if not segment.strip():
            raise SpecValidationError(f"empty segment #{position} in architecture '{arch}'")

    def parse_int(segment: str, what: str) -> int:
        try:
            return int(segment)
        except ValueError:
            raise SpecValidationError(f"bad {what} segment '{segment}' in architecture '{arch}'") from None

    input_dim = parse_int(segments[0], "input_dim")
    num_classes = parse_int(segments[-1], "num_classes")
    hidden = []
    for segment in segments[1:-1]:
        parts = [part.strip() for part in segment.split(",")]
        if len(parts) != 2 or not parts[1]:
            raise SpecValidationError(
                f"bad hidden layer segment '{segment}' in architecture '{arch}' (expected 'width,activation')"
            )
        hidden.append(HiddenLayer(parse_int(parts[0], "width"), parts[1].lower()))
    return ModelSpec(input_dim=input_dim, hidden_layers=tuple(hidden), num_classes=num_classes, init_seed=init_seed)


def default_spec(application: str, input_dim: int, num_classes: int = 2,
                 init_seed: int = NETWORK_DEFAULTS["init_seed"]) -> ModelSpec:
    """The documented architecture for 'water' or 'bus14'."""
    try:
        hidden = NETWORK_DEFAULTS["architectures"][application]
    except KeyError:
        raise SpecValidationError(f"no default architecture for '{application}'") from None
    return ModelSpec(input_dim=input_dim, hidden_layers=tuple(hidden), num_classes=num_classes, init_seed=init_seed)


@dataclass(frozen=True, eq=False)
class DenseLayer:
    weights: np.ndarray  # fan_in x fan_out
    biases: np.ndarray  # fan_out

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64, copy=True)
        biases = np.array(self.biases, dtype=np.float64, copy=True)
        weights.setflags(write=False)
        biases.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)


@dataclass(frozen=True, eq=False)
class Preprocessing:
    """Min-Max extrema fitted on the training split, kept with the checkpoint."""
    feature_names: Tuple[str, ...]
    normalization: NormalizationParams

    def __post_init__(self):
        object.__setattr__(self, "feature_names", tuple(str(name) for name in self.feature_names))
        if len(self.feature_names) != self.normalization.n_features:
            raise ShapeError("feature_names and normalization extrema differ in length")


@dataclass(frozen=True, eq=False)
class Model:
    """
    Parameters of a dense classifier. Arrays are read-only: every training
    or embedding step produces a new Model.
    """
    spec: ModelSpec
    layers: Tuple[DenseLayer, ...]
    trained_epochs: int = 0
    preprocessing: Optional[Preprocessing] = None

    def __post_init__(self):
        layers = tuple(self.layers)
        shapes = self.spec.layer_shapes()
        if len(layers) != len(shapes):
            raise ShapeError(f"spec has {len(shapes)} layers, got {len(layers)}")
        for index, (layer, (fan_in, fan_out)) in enumerate(zip(layers, shapes)):
            if layer.weights.shape != (fan_in, fan_out) or layer.biases.shape != (fan_out,):
                raise ShapeError(
                    f"layer {index}: expected weights {(fan_in, fan_out)} and biases {(fan_out,)}, "
                    f"got {layer.weights.shape} and {layer.biases.shape}"
                )
            if not (np.all(np.isfinite(layer.weights)) and np.all(np.isfinite(layer.biases))):
                raise NumericalInstabilityError(f"layer {index} contains NaN or Inf")
        if self.trained_epochs < 0:
            raise ValidationError(f"trained_epochs must be >= 0, got {self.trained_epochs}")
        if self.preprocessing is not None and len(self.preprocessing.feature_names) != self.spec.input_dim:
            raise ShapeError("preprocessing does not match input_dim")
        object.__setattr__(self, "layers", layers)

    def with_preprocessing(self, preprocessing: Optional[Preprocessing]) -> "Model":
        return replace(self, preprocessing=preprocessing)

    def normalize(self, features: np.ndarray) -> np.ndarray:
        """Apply the stored training extrema, or return features unchanged."""
        if self.preprocessing is None:
            return np.asarray(features, dtype=np.float64)
        return minmax_transform(features, self.preprocessing.normalization)


def init_model(spec: ModelSpec) -> Model:
    """
    Glorot-uniform initialization: weights ~ U(-r, r), r = sqrt(6 / (fan_in + fan_out)),
    drawn layer by layer from PCG64(init_seed); biases start at zero.
    """
    rng = make_rng(spec.init_seed)
    layers = []
    for fan_in, fan_out in spec.layer_shapes():
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        layers.append(DenseLayer(
            weights=rng.uniform(-limit, limit, size=(fan_in, fan_out)),
            biases=np.zeros(fan_out),
        ))
    return Model(spec=spec, layers=tuple(layers), trained_epochs=0)


# ----------------------------
# FORWARD PASS
# ----------------------------

class ForwardCounter:
    """Counts public forward evaluations (calls and rows)."""

    def __init__(self):
        self._lock = threading.Lock()
        self.calls = 0
        self.rows = 0

    def record(self, rows: int):
        with self._lock:
            self.calls += 1
            self.rows += rows

    def reset(self):
        with self._lock:
            self.calls = 0
            self.rows = 0


FORWARD_COUNTER = ForwardCounter()


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_batch(spec: ModelSpec, batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 1:
        batch = batch.reshape(1, -1)
    if batch.ndim != 2 or batch.shape[1] != spec.input_dim:
        raise ShapeError(f"model expects {spec.input_dim} features, got batch of shape {batch.shape}")
    if not np.all(np.isfinite(batch)):
        raise ValidationError("batch contains NaN or Inf")
    return batch


def _check_labels(spec: ModelSpec, labels, n: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    labels = labels.astype(np.int64)
    if np.any(labels < 0) or np.any(labels >= spec.num_classes):
        raise LabelRangeError(f"labels must lie in [0, {spec.num_classes})")
    return labels


def _forward_logits(weights: Sequence[np.ndarray], biases: Sequence[np.ndarray],
                    activations: Sequence[Activation], batch: np.ndarray):
    """Logits plus the (pre-activation, activation) cache of every hidden layer."""
    cache = []
    a = batch
    for W, b, activation in zip(weights[:-1], biases[:-1], activations):
        z = a @ W + b
        a = ACTIVATIONS[activation][0](z)
        cache.append((z, a))
    return a @ weights[-1] + biases[-1], cache


def forward(model: Model, batch) -> np.ndarray:
    """Class-probability matrix (n x num_classes); every row is a softmax distribution."""
    batch = _check_batch(model.spec, batch)
    FORWARD_COUNTER.record(batch.shape[0])
    logits, _ = _forward_logits(
        [layer.weights for layer in model.layers],
        [layer.biases for layer in model.layers],
        model.spec.activations,
        batch,
    )
    return softmax(logits)


def predict_labels(model: Model, samples) -> np.ndarray:
    """Argmax of forward; ties go to the lowest class index."""
    return np.argmax(forward(model, samples), axis=1).astype(np.int64)


# ----------------------------
# BACKPROPAGATION
# ----------------------------

@dataclass(frozen=True, eq=False)
class LayerGradient:
    weights: np.ndarray
    biases: np.ndarray


def _loss_and_gradients(weights, biases, activations, batch, labels):
    """Mean cross-entropy, per-row correctness and parameter gradients."""
    n = batch.shape[0]
    logits, cache = _forward_logits(weights, biases, activations, batch)
    log_probs = _log_softmax(logits)
    loss = -log_probs[np.arange(n), labels].mean()
    correct = np.argmax(logits, axis=1) == labels

    delta = np.exp(log_probs)
    delta[np.arange(n), labels] -= 1.0
    delta /= n

    grad_w = [None] * len(weights)
    grad_b = [None] * len(weights)
    for index in range(len(weights) - 1, -1, -1):
        previous = cache[index - 1][1] if index > 0 else batch
        grad_w[index] = previous.T @ delta
        grad_b[index] = delta.sum(axis=0)
        if index > 0:
            z, a = cache[index - 1]
            delta = (delta @ weights[index].T) * ACTIVATIONS[activations[index - 1]][1](z, a)
    return loss, correct, grad_w, grad_b


def compute_gradients(model: Model, batch, labels) -> Tuple[LayerGradient, ...]:
    """Exact gradients of the mean softmax cross-entropy over the batch."""
    batch = _check_batch(model.spec, batch)
    labels = _check_labels(model.spec, labels, batch.shape[0])
    _, _, grad_w, grad_b = _loss_and_gradients(
        [layer.weights for layer in model.layers],
        [layer.biases for layer in model.layers],
        model.spec.activations,
        batch,
        labels,
    )
    return tuple(LayerGradient(weights=gw, biases=gb) for gw, gb in zip(grad_w, grad_b))


def cross_entropy(model: Model, batch, labels) -> float:
    """Mean softmax cross-entropy of the model on a labelled batch."""
    batch = _check_batch(model.spec, batch)
    labels = _check_labels(model.spec, labels, batch.shape[0])
    logits, _ = _forward_logits(
        [layer.weights for layer in model.layers],
        [layer.biases for layer in model.layers],
        model.spec.activations,
        batch,
    )
    return float(-_log_softmax(logits)[np.arange(batch.shape[0]), labels].mean())


# ----------------------------
# TRAINING
# ----------------------------

class OptimizerName(str, Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass(frozen=True)
class OptimizerConfig:
    name: OptimizerName = OptimizerName(NETWORK_DEFAULTS["optimizer"])
    beta1: float = NETWORK_DEFAULTS["adam_beta1"]
    beta2: float = NETWORK_DEFAULTS["adam_beta2"]
    eps: float = NETWORK_DEFAULTS["adam_eps"]

    def __post_init__(self):
        object.__setattr__(self, "name", OptimizerName(self.name))
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValidationError("adam requires 0 <= beta1, beta2 < 1 and eps > 0")


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch training settings; the loss is always softmax cross-entropy."""
    epochs: int = NETWORK_DEFAULTS["epochs"]
    batch_size: int = NETWORK_DEFAULTS["batch_size"]
    learning_rate: float = NETWORK_DEFAULTS["learning_rate"]
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    shuffle_seed: int = NETWORK_DEFAULTS["shuffle_seed"]

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= int(self.shuffle_seed) < 2**64:
            raise ValidationError(f"shuffle_seed must be a 64-bit unsigned integer, got {self.shuffle_seed}")

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float


@dataclass(frozen=True)
class TrainHistory:
    records: Tuple[EpochRecord, ...] = ()

    def __len__(self):
        return len(self.records)

    @property
    def final_loss(self) -> Optional[float]:
        return self.records[-1].train_loss if self.records else None


class _SGD:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]):
        for param, grad in zip(params, grads):
            param -= self.learning_rate * grad


class _Adam:
    def __init__(self, learning_rate: float, config: OptimizerConfig, params: List[np.ndarray]):
        self.learning_rate = learning_rate
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.eps = config.eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]):
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for param, grad, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            param -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


EpochCallback = Callable[[int, Model, EpochRecord], None]


def train(model: Model, data: Dataset, cfg: TrainConfig,
          on_epoch_end: Optional[EpochCallback] = None) -> Tuple[Model, TrainHistory]:
    """
    Seeded-shuffle mini-batch training. Deterministic given (model, data, cfg).

    The optional callback receives (epoch, model snapshot, record) after
    every epoch; optimizer state carries over between epochs.
    """
    spec = model.spec
    if data.n_features != spec.input_dim:
        raise ShapeError(f"model expects {spec.input_dim} features, dataset has {data.n_features}")
    labels = _check_labels(spec, data.labels, data.n_samples)
    if cfg.epochs == 0:
        return model, TrainHistory()

    n = data.n_samples
    batch_size = cfg.batch_size
    if batch_size > n:
        logger.warning(f"batch_size {batch_size} exceeds dataset size {n}; using {n}")
        batch_size = n

    weights = [np.array(layer.weights) for layer in model.layers]
    biases = [np.array(layer.biases) for layer in model.layers]
    params = weights + biases
    if cfg.optimizer.name is OptimizerName.ADAM:
        optimizer = _Adam(cfg.learning_rate, cfg.optimizer, params)
    else:
        optimizer = _SGD(cfg.learning_rate)

    rng = make_rng(cfg.shuffle_seed)
    activations = spec.activations
    records = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total_loss = 0.0
        total_correct = 0
        for start in range(0, n, batch_size):
            rows = order[start:start + batch_size]
            loss, correct, grad_w, grad_b = _loss_and_gradients(
                weights, biases, activations, data.features[rows], labels[rows]
            )
            optimizer.step(params, grad_w + grad_b)
            total_loss += loss * len(rows)
            total_correct += int(correct.sum())

        if not all(np.all(np.isfinite(p)) for p in params):
            raise NumericalInstabilityError(f"non-finite parameters after epoch {epoch}")
        record = EpochRecord(epoch=epoch, train_loss=total_loss / n, train_accuracy=total_correct / n)
        records.append(record)
        logger.debug(f"epoch {epoch}/{cfg.epochs}: loss={record.train_loss:.4f} acc={record.train_accuracy:.4f}")

        if on_epoch_end is not None:
            on_epoch_end(epoch, _snapshot(model, weights, biases, epoch), record)

    trained = _snapshot(model, weights, biases, cfg.epochs)
    return trained, TrainHistory(records=tuple(records))


def _snapshot(model: Model, weights, biases, epochs_done: int) -> Model:
    return Model(
        spec=model.spec,
        layers=tuple(DenseLayer(weights=W, biases=b) for W, b in zip(weights, biases)),
        trained_epochs=model.trained_epochs + epochs_done,
        preprocessing=model.preprocessing,
    )


def accuracy_on(model: Model, samples, labels) -> float:
    """Fraction of rows whose predicted label equals the given label."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValidationError("accuracy is undefined on an empty sample set")
    labels = np.asarray(labels)
    if labels.shape != (samples.shape[0],):
        raise ShapeError(f"expected {samples.shape[0]} labels, got shape {labels.shape}")
    return float(np.mean(predict_labels(model, samples) == labels))


def evaluate_accuracy(model: Model, data: Dataset) -> float:
    return accuracy_on(model, data.features, data.labels)


# ----------------------------
# CHECKPOINTS
# ----------------------------

def dumps_model(model: Model) -> bytes:
    """Canonical checkpoint bytes (the content fingerprint is taken over these)."""
    preprocessing = None
    if model.preprocessing is not None:
        preprocessing = PreprocessingSerializer(
            feature_names=list(model.preprocessing.feature_names),
            minimum=model.preprocessing.normalization.minimum.tolist(),
            maximum=model.preprocessing.normalization.maximum.tolist(),
        )
    document = CheckpointDocument(
        format_version=CHECKPOINT_FORMAT_VERSION,
        spec=ModelSpecSerializer(
            input_dim=model.spec.input_dim,
            hidden_layers=[
                HiddenLayerSerializer(width=layer.width, activation=layer.activation.value)
                for layer in model.spec.hidden_layers
            ],
            num_classes=model.spec.num_classes,
            init_seed=model.spec.init_seed,
        ),
        trained_epochs=model.trained_epochs,
        layers=[
            DenseLayerSerializer(weights=layer.weights.tolist(), biases=layer.biases.tolist())
            for layer in model.layers
        ],
        preprocessing=preprocessing,
    )
    return dumps_document(document)


def loads_model(payload: bytes, path: Optional[PathLike] = None) -> Model:
    document = loads_document(payload, CheckpointDocument, CHECKPOINT_FORMAT_VERSION, path)
    try:
        spec = ModelSpec(
            input_dim=document.spec.input_dim,
            hidden_layers=tuple((layer.width, layer.activation) for layer in document.spec.hidden_layers),
            num_classes=document.spec.num_classes,
            init_seed=document.spec.init_seed,
        )
    except SpecValidationError as e:
        raise CorruptFileError(f"invalid spec: {e}", path) from e

    shapes = spec.layer_shapes()
    if len(document.layers) != len(shapes):
        raise ShapeMismatchError(f"spec has {len(shapes)} layers, file has {len(document.layers)}", path)
    layers = []
    for index, (layer, (fan_in, fan_out)) in enumerate(zip(document.layers, shapes)):
        if len(layer.weights) != fan_in or any(len(row) != fan_out for row in layer.weights):
            raise ShapeMismatchError(f"layer {index} weights are not {fan_in} x {fan_out}", path)
        if len(layer.biases) != fan_out:
            raise ShapeMismatchError(f"layer {index} has {len(layer.biases)} biases, expected {fan_out}", path)
        layers.append(DenseLayer(
            weights=np.array(layer.weights, dtype=np.float64).reshape(fan_in, fan_out),
            biases=np.array(layer.biases, dtype=np.float64),
        ))

    preprocessing = None
    if document.preprocessing is not None:
        if len(document.preprocessing.feature_names) != spec.input_dim:
            raise ShapeMismatchError("preprocessing does not match input_dim", path)
        try:
            preprocessing = Preprocessing(
                feature_names=tuple(document.preprocessing.feature_names),
                normalization=NormalizationParams(
                    minimum=document.preprocessing.minimum,
                    maximum=document.preprocessing.maximum,
                ),
            )
        except KeymarkError as e:
            raise CorruptFileError(f"invalid preprocessing: {e}", path) from e

    try:
        return Model(spec=spec, layers=tuple(layers), trained_epochs=document.trained_epochs,
                     preprocessing=preprocessing)
    except KeymarkError as e:
        raise CorruptFileError(str(e), path) from e


def save_model(model: Model, path: PathLike) -> Path:
    return write_artifact(path, dumps_model(model))


def load_model(path: PathLike) -> Model:
    return loads_model(read_artifact(path), path)
