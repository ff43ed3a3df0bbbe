import unittest

import numpy as np
from hypothesis import assume, given, settings, strategies as st

from keymark.data import Dataset
from keymark.exceptions import (
    CorruptFileError,
    FormatVersionError,
    LabelRangeError,
    ShapeError,
    ShapeMismatchError,
    SpecValidationError,
    ValidationError,
)
from keymark.nn_core import (
    FORWARD_COUNTER,
    DenseLayer,
    Model,
    ModelSpec,
    OptimizerConfig,
    TrainConfig,
    compute_gradients,
    cross_entropy,
    default_spec,
    dumps_model,
    evaluate_accuracy,
    forward,
    init_model,
    load_model,
    loads_model,
    parse_arch,
    predict_labels,
    save_model,
    train,
)
from keymark.utils import make_rng

from .support import FAST_TRAIN, toy_dataset, toy_spec


class ModelSpecTestCase(unittest.TestCase):
    def test_init_model_shapes(self):
        spec = ModelSpec(input_dim=9, hidden_layers=((16, "relu"),), num_classes=2, init_seed=42)
        model = init_model(spec)
        self.assertEqual([layer.weights.shape for layer in model.layers], [(9, 16), (16, 2)])
        self.assertEqual([layer.biases.shape for layer in model.layers], [(16,), (2,)])
        self.assertEqual(model.trained_epochs, 0)

    def test_init_model_is_deterministic(self):
        spec = toy_spec()
        self.assertEqual(dumps_model(init_model(spec)), dumps_model(init_model(spec)))

    def test_init_respects_glorot_limit(self):
        model = init_model(ModelSpec(input_dim=10, hidden_layers=((30, "tanh"),), num_classes=3))
        limit = np.sqrt(6.0 / 40)
        self.assertTrue(np.all(np.abs(model.layers[0].weights) <= limit))
        self.assertTrue(np.all(model.layers[0].biases == 0.0))

    def test_zero_width_is_rejected(self):
        with self.assertRaises(SpecValidationError):
            ModelSpec(input_dim=9, hidden_layers=((0, "relu"),), num_classes=2)

    def test_single_class_is_rejected(self):
        with self.assertRaises(SpecValidationError):
            ModelSpec(input_dim=9, hidden_layers=(), num_classes=1)

    def test_parse_arch(self):
        spec = parse_arch("9:32,relu:16,tanh:2", init_seed=5)
        self.assertEqual(spec.input_dim, 9)
        self.assertEqual([(layer.width, layer.activation.value) for layer in spec.hidden_layers],
                         [(32, "relu"), (16, "tanh")])
        self.assertEqual(spec.num_classes, 2)
        self.assertEqual(spec.to_arch_string(), "9:32,relu:16,tanh:2")

    def test_parse_arch_names_empty_segment(self):
        with self.assertRaises(SpecValidationError) as ctx:
            parse_arch("9::2")
        self.assertIn("empty segment #1", str(ctx.exception))

    def test_parse_arch_rejects_unknown_activation(self):
        with self.assertRaises(SpecValidationError):
            parse_arch("9:16,softplus:2")

    def test_default_specs(self):
        self.assertEqual(default_spec("water", 9).to_arch_string(), "9:32,relu:16,relu:2")
        self.assertEqual(default_spec("bus14", 16).to_arch_string(), "16:64,relu:32,relu:2")
        with self.assertRaises(SpecValidationError):
            default_spec("mnist", 784)


class ForwardTestCase(unittest.TestCase):
    def setUp(self):
        self.model = init_model(ModelSpec(input_dim=5, hidden_layers=((8, "sigmoid"), (6, "tanh")), num_classes=3))

    def test_rows_are_distributions(self):
        batch = make_rng(1).uniform(-3, 3, size=(50, 5))
        probs = forward(self.model, batch)
        self.assertEqual(probs.shape, (50, 3))
        self.assertTrue(np.all(probs > 0.0))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_extreme_inputs_stay_finite(self):
        probs = forward(self.model, np.full((2, 5), 1e6))
        self.assertTrue(np.all(np.isfinite(probs)))

    def test_wrong_width_is_rejected(self):
        with self.assertRaises(ShapeError):
            forward(self.model, np.zeros((3, 4)))

    def test_nan_input_is_rejected(self):
        batch = np.zeros((2, 5))
        batch[0, 0] = np.nan
        with self.assertRaises(ValidationError):
            forward(self.model, batch)

    def test_forward_counter_counts_rows(self):
        FORWARD_COUNTER.reset()
        predict_labels(self.model, np.zeros((7, 5)))
        forward(self.model, np.zeros((3, 5)))
        self.assertEqual(FORWARD_COUNTER.calls, 2)
        self.assertEqual(FORWARD_COUNTER.rows, 10)

    def test_rows_do_not_depend_on_batch_companions(self):
        batch = make_rng(2).uniform(0.0, 1.0, size=(32, 5))
        alone = forward(self.model, batch[7:8])
        np.testing.assert_allclose(alone[0], forward(self.model, batch)[7], rtol=0, atol=1e-12)

    def test_zero_model_is_uniform_and_ties_go_to_class_zero(self):
        zero = Model(
            spec=self.model.spec,
            layers=tuple(DenseLayer(np.zeros_like(layer.weights), np.zeros_like(layer.biases))
                         for layer in self.model.layers),
        )
        batch = make_rng(3).uniform(0.0, 1.0, size=(4, 5))
        np.testing.assert_allclose(forward(zero, batch), np.full((4, 3), 1.0 / 3), atol=1e-12)
        np.testing.assert_array_equal(predict_labels(zero, batch), [0, 0, 0, 0])


def _numeric_gradient(model, batch, labels, layer, name, h=1e-5):
    params = getattr(model.layers[layer], name)
    grad = np.zeros_like(params)
    for index in np.ndindex(params.shape):
        values = []
        for step in (h, -h):
            perturbed = np.array(params)
            perturbed[index] += step
            layers = list(model.layers)
            layers[layer] = type(layers[layer])(
                weights=perturbed if name == "weights" else layers[layer].weights,
                biases=perturbed if name == "biases" else layers[layer].biases,
            )
            values.append(cross_entropy(type(model)(spec=model.spec, layers=tuple(layers)), batch, labels))
        grad[index] = (values[0] - values[1]) / (2 * h)
    return grad


class GradientTestCase(unittest.TestCase):
    @settings(max_examples=50, deadline=None)
    @given(
        seed=st.integers(min_value=0, max_value=2**32 - 1),
        input_dim=st.integers(min_value=1, max_value=5),
        width=st.integers(min_value=1, max_value=8),
        activation=st.sampled_from(["relu", "sigmoid", "tanh"]),
        num_classes=st.integers(min_value=2, max_value=4),
    )
    def test_gradients_match_central_differences(self, seed, input_dim, width, activation, num_classes):
        spec = ModelSpec(input_dim=input_dim, hidden_layers=((width, activation),),
                         num_classes=num_classes, init_seed=seed)
        model = init_model(spec)
        rng = make_rng(seed)
        batch = rng.uniform(0.0, 1.0, size=(6, input_dim))
        labels = rng.integers(0, num_classes, size=6)
        if activation == "relu":
            # keep central differences away from the kink at zero
            assume(np.min(np.abs(batch @ model.layers[0].weights)) > 1e-3)
        analytic = compute_gradients(model, batch, labels)

        for layer in range(len(model.layers)):
            for name in ("weights", "biases"):
                numeric = _numeric_gradient(model, batch, labels, layer, name)
                np.testing.assert_allclose(getattr(analytic[layer], name), numeric, rtol=1e-4, atol=1e-8)

    def test_duplicated_batch_has_the_same_gradients(self):
        model = init_model(toy_spec())
        rng = make_rng(4)
        batch = rng.uniform(0.0, 1.0, size=(5, 4))
        labels = rng.integers(0, 2, size=5)
        single = compute_gradients(model, batch, labels)
        doubled = compute_gradients(model, np.vstack([batch, batch]), np.concatenate([labels, labels]))
        for a, b in zip(single, doubled):
            np.testing.assert_allclose(a.weights, b.weights, rtol=0, atol=1e-12)
            np.testing.assert_allclose(a.biases, b.biases, rtol=0, atol=1e-12)

    def test_output_bias_gradient_closed_form(self):
        model = init_model(ModelSpec(input_dim=3, hidden_layers=((6, "tanh"),), num_classes=3, init_seed=5))
        rng = make_rng(6)
        batch = rng.uniform(0.0, 1.0, size=(8, 3))
        labels = rng.integers(0, 3, size=8)
        expected = (forward(model, batch) - np.eye(3)[labels]).mean(axis=0)
        np.testing.assert_allclose(compute_gradients(model, batch, labels)[-1].biases, expected, rtol=0, atol=1e-12)

    def test_labels_out_of_range(self):
        model = init_model(toy_spec())
        with self.assertRaises(LabelRangeError):
            compute_gradients(model, np.zeros((2, 4)), [0, 2])


class TrainTestCase(unittest.TestCase):
    def setUp(self):
        self.data = toy_dataset(n=300)

    def test_training_improves_accuracy(self):
        model = init_model(toy_spec())
        before = evaluate_accuracy(model, self.data)
        trained, history = train(model, self.data, FAST_TRAIN)
        self.assertEqual(len(history), FAST_TRAIN.epochs)
        self.assertEqual(trained.trained_epochs, FAST_TRAIN.epochs)
        self.assertGreater(evaluate_accuracy(trained, self.data), max(before, 0.85))
        self.assertLess(history.records[-1].train_loss, history.records[0].train_loss)

    def test_separable_set_is_fitted(self):
        rng = make_rng(8)
        labels = np.repeat([0, 1], 10)
        features = np.column_stack([
            np.where(labels == 1, rng.uniform(0.7, 0.9, 20), rng.uniform(0.1, 0.3, 20)),
            rng.uniform(0.0, 1.0, 20),
        ])
        data = Dataset(features=features, labels=labels, feature_names=("a", "b"), num_classes=2)
        model = init_model(ModelSpec(input_dim=2, hidden_layers=((8, "relu"),), num_classes=2, init_seed=1))
        cfg = TrainConfig(epochs=200, batch_size=20, learning_rate=0.05, shuffle_seed=0)
        trained, history = train(model, data, cfg)
        self.assertEqual(evaluate_accuracy(trained, data), 1.0)
        self.assertLess(history.final_loss, cross_entropy(model, features, labels))

    def test_training_is_deterministic(self):
        first, _ = train(init_model(toy_spec()), self.data, FAST_TRAIN)
        second, _ = train(init_model(toy_spec()), self.data, FAST_TRAIN)
        self.assertEqual(dumps_model(first), dumps_model(second))

    def test_zero_epochs_returns_initial_model(self):
        model = init_model(toy_spec())
        trained, history = train(model, self.data, FAST_TRAIN.with_(epochs=0))
        self.assertEqual(len(history), 0)
        self.assertEqual(dumps_model(trained), dumps_model(model))

    def test_sgd_optimizer(self):
        cfg = FAST_TRAIN.with_(optimizer=OptimizerConfig(name="sgd"), learning_rate=0.5)
        trained, history = train(init_model(toy_spec()), self.data, cfg)
        self.assertTrue(all(np.isfinite(record.train_loss) for record in history.records))

    def test_oversized_batch_is_clamped(self):
        small = toy_dataset(n=10)
        with self.assertLogs("keymark.nn_core", level="WARNING"):
            trained, history = train(init_model(toy_spec()), small, FAST_TRAIN.with_(epochs=1, batch_size=64))
        self.assertEqual(len(history), 1)

    def test_epoch_callback_sees_every_epoch(self):
        seen = []
        final, _ = train(init_model(toy_spec()), self.data, FAST_TRAIN.with_(epochs=3),
                         on_epoch_end=lambda epoch, snapshot, record: seen.append((epoch, snapshot)))
        self.assertEqual([epoch for epoch, _ in seen], [1, 2, 3])
        self.assertEqual(dumps_model(seen[-1][1]), dumps_model(final))

    def test_input_model_is_not_mutated(self):
        model = init_model(toy_spec())
        payload = dumps_model(model)
        train(model, self.data, FAST_TRAIN.with_(epochs=2))
        self.assertEqual(dumps_model(model), payload)

    def test_invalid_config(self):
        with self.assertRaises(ValidationError):
            TrainConfig(learning_rate=0.0)
        with self.assertRaises(ValidationError):
            TrainConfig(batch_size=0)

    def test_dimension_mismatch(self):
        with self.assertRaises(ShapeError):
            train(init_model(toy_spec(d=5)), self.data, FAST_TRAIN)


class CheckpointTestCase(unittest.TestCase):
    def setUp(self):
        self.model = init_model(ModelSpec(input_dim=3, hidden_layers=((4, "tanh"),), num_classes=2))

    def test_save_and_load(self):
        import tempfile
        from pathlib import Path

        with tempfile.TemporaryDirectory() as tmp:
            path = save_model(self.model, Path(tmp) / "model.json")
            loaded = load_model(path)
        self.assertEqual(dumps_model(loaded), dumps_model(self.model))
        for original, restored in zip(self.model.layers, loaded.layers):
            np.testing.assert_array_equal(original.weights, restored.weights)

    def test_truncated_file(self):
        payload = dumps_model(self.model)
        with self.assertRaises(CorruptFileError):
            loads_model(payload[: len(payload) // 2])

    def test_unknown_version(self):
        payload = dumps_model(self.model).replace(b'"format_version": 1', b'"format_version": 99')
        with self.assertRaises(FormatVersionError):
            loads_model(payload)

    def test_shape_mismatch(self):
        import orjson

        document = orjson.loads(dumps_model(self.model))
        document["layers"][0]["biases"].append(0.0)
        with self.assertRaises(ShapeMismatchError):
            loads_model(orjson.dumps(document))

    def test_wrong_document_kind(self):
        payload = dumps_model(self.model).replace(b"keymark.checkpoint", b"keymark.key")
        with self.assertRaises(CorruptFileError):
            loads_model(payload)

    @settings(max_examples=200, deadline=None)
    @given(
        seed=st.integers(min_value=0, max_value=2**64 - 1),
        input_dim=st.integers(min_value=1, max_value=6),
        widths=st.lists(st.integers(min_value=1, max_value=6), max_size=3),
        num_classes=st.integers(min_value=2, max_value=4),
        epochs=st.integers(min_value=0, max_value=1000),
    )
    def test_round_trip_is_exact(self, seed, input_dim, widths, num_classes, epochs):
        spec = ModelSpec(input_dim=input_dim, hidden_layers=tuple((w, "tanh") for w in widths),
                         num_classes=num_classes, init_seed=seed)
        model = init_model(spec)
        model = type(model)(spec=spec, layers=model.layers, trained_epochs=epochs)
        payload = dumps_model(model)
        restored = loads_model(payload)
        self.assertEqual(restored.trained_epochs, epochs)
        self.assertEqual(dumps_model(restored), payload)
        for original, copy in zip(model.layers, restored.layers):
            self.assertEqual(original.weights.tobytes(), copy.weights.tobytes())
