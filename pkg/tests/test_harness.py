import math
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pytest

from keymark.exceptions import ConfigError
from keymark.harness import (
    ExperimentConfig,
    ResilienceRecord,
    SweepRecord,
    build_experiment_config,
    emit_report,
    load_experiment_config,
    load_report,
    prepare_data,
    run_epoch_sweep,
    run_finetune_resilience,
    run_key_length_sweep,
    shadow_trend,
)
from keymark.watermark import SelectionRule

SMALL = {
    "synthetic_n": 500,
    "hidden_layers": "16,relu",
    "train_epochs": 15,
    "learning_rate": 0.01,
    "key_lengths": [3, 6],
    "pool_multiplier": 60,
    "embed_epochs": 40,
    "epoch_sweep": [10, 40],
    "epoch_sweep_key_length": 3,
    "finetune_epochs": 3,
    "finetune_key_length": 3,
    "replicates": 2,
}


def _sweep_record(k: int, epochs: int, shadow: float = 0.5) -> SweepRecord:
    return SweepRecord(
        k=k,
        embed_epochs=epochs,
        selection_rule=SelectionRule.STRICT,
        model_accuracy=0.6712,
        shadow_key_accuracy=shadow,
        watermarked_key_accuracy=1.0,
        succeeded=5,
    )


class ExperimentConfigTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_defaults(self):
        cfg = ExperimentConfig()
        self.assertEqual(cfg.key_lengths, list(range(10, 101, 10)))
        self.assertEqual(cfg.epoch_sweep, [5, 10, 20, 40, 80])
        self.assertEqual(cfg.split_fractions, (0.4, 0.1, 0.4, 0.1))
        self.assertEqual(cfg.selection_rules, [SelectionRule.STRICT])

    def test_yaml_file_with_overrides(self):
        path = self.dir / "experiment.yaml"
        path.write_text("key_lengths: [5, 10]\nreplicates: 3\ndata_csv: water.csv\n")
        cfg = load_experiment_config(path, seed=9, jobs=None)
        self.assertEqual(cfg.key_lengths, [5, 10])
        self.assertEqual(cfg.replicates, 3)
        self.assertEqual(cfg.seed, 9)
        self.assertEqual(Path(cfg.data_csv), self.dir / "water.csv")

    def test_empty_file_means_defaults(self):
        path = self.dir / "empty.yaml"
        path.write_text("")
        self.assertEqual(load_experiment_config(path).replicates, 5)

    def test_unknown_key(self):
        path = self.dir / "bad.yaml"
        path.write_text("key_length: 5\n")
        with self.assertRaises(ConfigError):
            load_experiment_config(path)

    def test_empty_sweep_list(self):
        with self.assertRaises(ConfigError):
            build_experiment_config({"key_lengths": []})

    def test_bad_fractions(self):
        with self.assertRaises(ConfigError):
            build_experiment_config({"split_train": 0.9})

    def test_not_a_mapping(self):
        path = self.dir / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with self.assertRaises(ConfigError):
            load_experiment_config(path)

    def test_splits_are_disjoint(self):
        data = prepare_data(build_experiment_config(SMALL))
        parts = [data.train, data.test, data.shadow, data.newer]
        ids = np.concatenate([part.row_ids for part in parts])
        self.assertEqual(len(np.unique(ids)), 500)
        self.assertTrue(np.all((data.train.features >= 0.0) & (data.train.features <= 1.0)))


class ReportTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_table_has_header_and_one_row_per_record(self):
        records = [_sweep_record(k, 30) for k in range(10, 101, 10)]
        lines = emit_report(records, self.dir / "table.txt", "table_text").read_text().splitlines()
        self.assertEqual(len(lines), 11)
        self.assertIn("Watermark detection accuracy for non-watermarked model", lines[0])
        self.assertIn("67.12%", lines[1])

    def test_structured_round_trip_is_byte_identical(self):
        records = [_sweep_record(10, 30, 0.8399), _sweep_record(100, 30, 0.6301)]
        first = emit_report(records, self.dir / "a.json", "structured")
        report_type, loaded = load_report(first)
        self.assertEqual(report_type, "sweep")
        second = emit_report(loaded, self.dir / "b.json", "structured", report_type)
        self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_empty_report(self):
        path = emit_report([], self.dir / "empty.json", "structured", "resilience")
        self.assertEqual(load_report(path), ("resilience", []))
        table = emit_report([], self.dir / "empty.txt", "table_text", "resilience").read_text()
        self.assertEqual(len(table.splitlines()), 1)

    def test_failed_point_renders_as_failed(self):
        record = SweepRecord(k=10, embed_epochs=0, selection_rule=SelectionRule.STRICT, failed=5)
        text = emit_report([record], self.dir / "t.txt", "table_text").read_text()
        self.assertIn("failed", text)

    def test_shadow_trend(self):
        decreasing = [_sweep_record(50, e, s) for e, s in [(5, 0.8), (10, 0.7), (20, 0.65), (40, 0.6)]]
        self.assertAlmostEqual(shadow_trend(decreasing), -1.0)
        self.assertTrue(math.isnan(shadow_trend(decreasing[:1])))


@pytest.mark.slow
class SweepTestCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.cfg = build_experiment_config(SMALL)

    def test_key_length_sweep(self):
        records = run_key_length_sweep(self.cfg)
        self.assertEqual([r.k for r in records], [3, 6])
        for record in records:
            self.assertEqual(record.succeeded + record.failed, 2)
            self.assertEqual(len(record.replicates), 2)
            if record.succeeded:
                self.assertEqual(record.watermarked_key_accuracy, 1.0)
                self.assertTrue(0.0 <= record.shadow_key_accuracy <= 1.0)

    def test_sweep_is_deterministic(self):
        first = run_epoch_sweep(self.cfg)
        second = run_epoch_sweep(self.cfg)
        self.assertEqual([r.model_dump() for r in first], [r.model_dump() for r in second])
        self.assertEqual([r.embed_epochs for r in first], [10, 40])

    def test_parallel_matches_sequential(self):
        parallel = run_key_length_sweep(build_experiment_config({**SMALL, "jobs": 2}))
        sequential = run_key_length_sweep(self.cfg)
        self.assertEqual([r.model_dump() for r in parallel], [r.model_dump() for r in sequential])

    def test_both_selection_rules(self):
        cfg = build_experiment_config({**SMALL, "key_lengths": [3], "selection_rules": ["strict", "literal_eq4"]})
        records = run_key_length_sweep(cfg)
        self.assertEqual(sorted(r.selection_rule.value for r in records), ["literal_eq4", "strict"])
        by_rule = {r.selection_rule: r for r in records}
        self.assertGreater(by_rule[SelectionRule.LITERAL_EQ4].succeeded, 0)
        self.assertEqual(by_rule[SelectionRule.LITERAL_EQ4].failed, 0)

    def test_finetune_resilience(self):
        records = run_finetune_resilience(self.cfg)
        self.assertEqual([r.finetune_epochs_completed for r in records], [0, 1, 2, 3])
        self.assertIsInstance(records[0], ResilienceRecord)
        self.assertEqual(records[0].key_accuracy, 1.0)
        for record in records:
            self.assertTrue(0.0 <= record.task_accuracy <= 1.0)
