#!/usr/bin/env python
"""
Watermark Evaluation Framework
==============================

Runs the long trend experiments and checks them against the expected
behaviour of the integrity watermark.

Checks:
- Baseline accuracy: un-watermarked test accuracy in [0.58, 0.74] for >= 3 of 5 seeds
  (real water potability CSV only)
- Task-accuracy cost: mean accuracy at k=100 at most 10 points below k=10
- Shadow discrimination: shadow key accuracy at k=100 below k=10 and within [0.45, 0.78]
- Embedding epochs: Spearman(embed_epochs, shadow key accuracy) <= 0
- Fine-tuning resilience: key accuracy >= 0.90 in >= 4 of 5 replicates after 10 epochs
- Verification cost: one forward evaluation of exactly k rows

Usage:
    # Synthetic water-like data
    python tests/evaluate_watermark.py

    # Real dataset
    python tests/evaluate_watermark.py --data water_potability.csv --label Potability

    # Save results
    python tests/evaluate_watermark.py --output results.json
"""
import os
import sys
import argparse
from datetime import datetime

import orjson

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from keymark.cli import configure_logging
from keymark.harness import (
    build_experiment_config,
    prepare_data,
    replicate_seed,
    run_epoch_sweep,
    run_finetune_resilience,
    run_key_length_sweep,
    shadow_trend,
    train_stage_one,
    watermark_config,
)
from keymark.nn_core import FORWARD_COUNTER, evaluate_accuracy
from keymark.verify import verify
from keymark.watermark import SelectionRule, run_embedding_pipeline


BASELINE_BAND = (0.58, 0.74)
SHADOW_BAND_K100 = (0.45, 0.78)
MAX_ACCURACY_DROP = 0.10
RESILIENCE_THRESHOLD = 0.90


def banner(title: str):
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60)


def report(name: str, passed, detail: str):
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    print(f"  [{status}] {name}: {detail}")
    return {"check": name, "passed": passed, "detail": detail}


def check_baseline(cfg, data, real_data: bool):
    banner("BASELINE TASK ACCURACY")
    accuracies = []
    for replicate in range(cfg.replicates):
        base, _ = train_stage_one(data, cfg, replicate)
        accuracies.append(evaluate_accuracy(base, data.test))
        print(f"  replicate {replicate}: {accuracies[-1]:.4f}")
    in_band = sum(BASELINE_BAND[0] <= a <= BASELINE_BAND[1] for a in accuracies)
    detail = f"{in_band}/{len(accuracies)} in {list(BASELINE_BAND)}"
    if not real_data:
        return report("baseline accuracy", None, detail + " (band applies to the real dataset)")
    return report("baseline accuracy", in_band >= 3, detail)


def check_key_length_trends(cfg):
    banner("KEY-LENGTH SWEEP")
    records = {r.k: r for r in run_key_length_sweep(cfg, progress=True)}
    for k, r in sorted(records.items()):
        print(f"  k={k:>3}: model {r.model_accuracy}, shadow {r.shadow_key_accuracy}, "
              f"watermarked {r.watermarked_key_accuracy} ({r.succeeded} ok)")

    results = []
    short, long = records.get(10), records.get(100)
    if short is None or long is None or short.model_accuracy is None or long.model_accuracy is None:
        results.append(report("key-length trends", False, "k=10 or k=100 point missing or failed"))
        return results

    drop = short.model_accuracy - long.model_accuracy
    results.append(report("task-accuracy cost", drop <= MAX_ACCURACY_DROP,
                          f"{short.model_accuracy:.4f} -> {long.model_accuracy:.4f} (drop {drop * 100:.2f} points)"))
    in_band = SHADOW_BAND_K100[0] <= long.shadow_key_accuracy <= SHADOW_BAND_K100[1]
    results.append(report("shadow discrimination",
                          long.shadow_key_accuracy < short.shadow_key_accuracy and in_band,
                          f"{short.shadow_key_accuracy:.4f} -> {long.shadow_key_accuracy:.4f}"))
    exact = all(r.watermarked_key_accuracy == 1.0 for r in records.values()
                if r.succeeded and r.selection_rule is SelectionRule.STRICT)
    results.append(report("watermarked key accuracy", exact, "1.0 at every successful strict point"))
    return results


def check_epoch_trend(cfg):
    banner("EMBEDDING-EPOCH SWEEP")
    records = run_epoch_sweep(cfg, progress=True)
    for r in records:
        print(f"  epochs={r.embed_epochs:>3}: shadow {r.shadow_key_accuracy}")
    rho = shadow_trend(records)
    return report("embedding-epoch trend", bool(rho <= 0), f"Spearman rho = {rho:.4f}")


def check_resilience(cfg):
    banner("FINE-TUNING RESILIENCE")
    records = run_finetune_resilience(cfg, progress=True)
    for r in records:
        print(f"  epoch {r.finetune_epochs_completed:>2}: key {r.key_accuracy:.4f}, task {r.task_accuracy:.4f}")
    final = records[-1]
    survivors = sum(a >= RESILIENCE_THRESHOLD for a in final.key_accuracies)
    return report("fine-tuning resilience", survivors >= 4,
                  f"{survivors}/{len(final.key_accuracies)} replicates at >= {RESILIENCE_THRESHOLD}")


def check_verification_cost(cfg, data):
    banner("VERIFICATION COST")
    base, _ = train_stage_one(data, cfg, 0)
    wcfg = watermark_config(cfg, replicate_seed(cfg, 0), cfg.finetune_key_length,
                            cfg.embed_epochs, cfg.selection_rules[0])
    outcome = run_embedding_pipeline(base, data.train, data.test, wcfg)
    FORWARD_COUNTER.reset()
    verify(outcome.watermarked_model, outcome.key)
    return report("verification cost", FORWARD_COUNTER.calls == 1 and FORWARD_COUNTER.rows == outcome.key.k,
                  f"{FORWARD_COUNTER.calls} forward call(s), {FORWARD_COUNTER.rows} rows for k={outcome.key.k}")


def run_evaluation(data_csv=None, label="Potability", replicates=5, jobs=1):
    banner("WATERMARK EVALUATION FRAMEWORK - keymark")
    print(f"Timestamp: {datetime.now().isoformat()}")
    print(f"Data: {data_csv or 'synthetic water_like'}")

    raw = {"replicates": replicates, "jobs": jobs}
    if data_csv:
        raw.update({"data_csv": data_csv, "label_column": label})
    cfg = build_experiment_config(raw, source="evaluation")
    data = prepare_data(cfg)

    results = [check_baseline(cfg, data, real_data=bool(data_csv))]
    results.extend(check_key_length_trends(cfg))
    results.append(check_epoch_trend(cfg))
    results.append(check_resilience(cfg))
    results.append(check_verification_cost(cfg, data))

    banner("EVALUATION SUMMARY")
    decided = [r for r in results if r["passed"] is not None]
    passed = sum(1 for r in decided if r["passed"])
    print(f"Checks Passed: {passed}/{len(decided)} ({len(results) - len(decided)} skipped)")

    overall_pass = passed == len(decided)
    print(f"\nOVERALL: {'PASS' if overall_pass else 'FAIL'}")

    return {
        "timestamp": datetime.now().isoformat(),
        "data": data_csv,
        "replicates": replicates,
        "checks": results,
        "overall_passed": overall_pass,
    }


# ===================================
# MAIN
# ===================================

if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Watermark Evaluation Framework")
    parser.add_argument("--data", help="Water potability CSV (default: synthetic water_like data)")
    parser.add_argument("--label", default="Potability", help="Label column of --data")
    parser.add_argument("--replicates", type=int, default=5)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--verbose", "-v", action="store_true", help="Show pipeline logging")
    parser.add_argument("--output", "-o", help="Save results to JSON file")

    args = parser.parse_args()
    configure_logging(verbose=False, quiet=not args.verbose)

    results = run_evaluation(
        data_csv=args.data,
        label=args.label,
        replicates=args.replicates,
        jobs=args.jobs,
    )

    if args.output and results:
        with open(args.output, "wb") as f:
            f.write(orjson.dumps(results, option=orjson.OPT_INDENT_2))
        print(f"\nResults saved to: {args.output}")

    sys.exit(0 if results and results.get("overall_passed") else 1)
