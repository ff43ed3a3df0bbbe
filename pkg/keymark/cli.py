"""
keymark command-line interface.

Usage:
    keymark gen-data --kind water_like --n 3276 --out water.csv
    keymark train --data water.csv --label label --out model.json
    keymark embed --model model.json --data water.csv --out-model wm.json --out-key key.json
    keymark verify --model wm.json --key key.json
    keymark monitor --key key.json ckpt_01.json ckpt_02.json
    keymark sweep --config experiment.yaml --kind key-length --out reports/
    keymark resilience --config experiment.yaml --out reports/

Exit codes: 0 success / intact, 1 tampered (verify, monitor), 2 error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import __version__
from .config import (
    CHECKPOINT_FORMAT_VERSION,
    DATA_DEFAULTS,
    KEY_FORMAT_VERSION,
    LOGGING_CONFIG,
    NETWORK_DEFAULTS,
    REPORT_FORMAT_VERSION,
    VERIFY_DEFAULTS,
    WATERMARK_DEFAULTS,
    get_settings,
)
from .data import (
    Dataset,
    SplitSpec,
    SyntheticKind,
    apply_minmax,
    fit_minmax,
    generate_synthetic,
    load_csv,
    split,
    write_csv,
)
from .exceptions import KeymarkError, ShapeError
from .harness import (
    ExperimentConfig,
    build_experiment_config,
    emit_report,
    load_experiment_config,
    render_table,
    run_epoch_sweep,
    run_finetune_resilience,
    run_key_length_sweep,
    shadow_trend,
)
from .nn_core import (
    Preprocessing,
    TrainConfig,
    default_spec,
    evaluate_accuracy,
    init_model,
    load_model,
    parse_arch,
    save_model,
    train,
)
from .utils import derive_seed
from .verify import (
    Verdict,
    VerifyPolicy,
    monitor_checkpoints,
    render_report,
    verify,
    verify_from_files,
    write_report,
)
from .watermark import SelectionRule, WatermarkConfig, run_embedding_pipeline, save_key

logger = logging.getLogger("keymark")

EXIT_OK = 0
EXIT_TAMPERED = 1
EXIT_ERROR = 2

DEFAULT_TEST_FRACTION = 0.2


def configure_logging(verbose: bool = False, quiet: bool = False):
    """Stream handler on stderr, plus a file handler when KEYMARK_LOG_FILE is set."""
    settings = get_settings()
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.ERROR
    else:
        level = getattr(logging, settings.log_level.upper(), logging.INFO)

    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if settings.log_file:
        handlers.append(logging.FileHandler(settings.log_file))
    logging.basicConfig(
        level=level,
        format=settings.log_format or LOGGING_CONFIG["format"],
        handlers=handlers,
        force=True,
    )


def _say(args: argparse.Namespace, message: str = ""):
    if not args.quiet:
        print(message)


def _seed(args: argparse.Namespace) -> int:
    return 0 if args.seed is None else args.seed


def _out(args: argparse.Namespace, default: str) -> Path:
    return Path(args.out if args.out is not None else default)


# ----------------------------
# DATA PREPARATION (train / embed)
# ----------------------------

def _split_and_normalize(data: Dataset, args: argparse.Namespace,
                         preprocessing: Optional[Preprocessing]):
    """
    Reproduce the train/test partition for this seed and normalize both parts
    with the given training extrema (fitted on the train part when absent).
    """
    train_raw, test_raw = split(data, SplitSpec((1.0 - args.test_fraction, args.test_fraction), _seed(args)))
    if preprocessing is None:
        preprocessing = Preprocessing(train_raw.feature_names, fit_minmax(train_raw))
    elif preprocessing.feature_names != data.feature_names:
        raise ShapeError(
            f"checkpoint was trained on features {list(preprocessing.feature_names)}, "
            f"data has {list(data.feature_names)}"
        )
    return (
        apply_minmax(train_raw, preprocessing.normalization),
        apply_minmax(test_raw, preprocessing.normalization),
        preprocessing,
    )


# ----------------------------
# COMMANDS
# ----------------------------

def cmd_gen_data(args: argparse.Namespace) -> int:
    data = generate_synthetic(args.kind, args.n, _seed(args))
    path = write_csv(data, _out(args, f"{args.kind}.csv"))
    _say(args, f"Wrote {data.n_samples} rows x {data.n_features} features to {path}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    data = load_csv(args.data, args.label, args.num_classes)

    if args.resume:
        model = load_model(args.resume)
        train_data, test_data, _ = _split_and_normalize(data, args, model.preprocessing)
        logger.info(f"Resuming {args.resume} after {model.trained_epochs} epochs")
    else:
        train_data, test_data, preprocessing = _split_and_normalize(data, args, None)
        if args.spec:
            spec = parse_arch(args.spec, args.init_seed)
        else:
            spec = default_spec(args.application, data.n_features, args.num_classes, args.init_seed)
        model = init_model(spec).with_preprocessing(preprocessing)

    if model.spec.input_dim != data.n_features:
        raise ShapeError(f"architecture expects {model.spec.input_dim} features, {args.data} has {data.n_features}")

    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        shuffle_seed=derive_seed(_seed(args), "train"),
    )
    trained, history = train(model, train_data, cfg)
    path = save_model(trained, _out(args, "model.json"))

    _say(args, f"Architecture:   {trained.spec.to_arch_string()}")
    _say(args, f"Epochs:         {trained.trained_epochs}")
    if history.final_loss is not None:
        _say(args, f"Final loss:     {history.final_loss:.4f}")
    _say(args, f"Train accuracy: {evaluate_accuracy(trained, train_data):.4f}")
    _say(args, f"Test accuracy:  {evaluate_accuracy(trained, test_data):.4f}")
    _say(args, f"Checkpoint:     {path}")
    return EXIT_OK


def cmd_embed(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    data = load_csv(args.data, args.label, model.spec.num_classes)
    if model.preprocessing is None:
        logger.warning(f"{args.model} has no stored extrema; fitting Min-Max on the train part of {args.data}")
    train_data, test_data, preprocessing = _split_and_normalize(data, args, model.preprocessing)
    model = model.with_preprocessing(preprocessing)

    cfg = WatermarkConfig(
        key_length=args.k,
        pool_multiplier=args.C,
        embed_epochs=args.embed_epochs,
        selection_rule=args.rule,
        rng_seed=derive_seed(_seed(args), "watermark"),
        embed_train_cfg=TrainConfig(batch_size=args.batch_size, learning_rate=args.lr),
    )
    outcome = run_embedding_pipeline(model, train_data, test_data, cfg)

    model_path = save_model(outcome.watermarked_model, args.out_model)
    key_path = save_key(outcome.key, args.out_key)
    self_check = verify(outcome.watermarked_model, outcome.key)

    _say(args, f"Accuracy before: {outcome.accuracy_before:.4f}")
    _say(args, f"Accuracy after:  {outcome.accuracy_after:.4f}")
    _say(args, f"Eligible |W|:    {outcome.eligible_count} of {outcome.pool.size}")
    _say(args, f"Key self-check:  {self_check.key_accuracy:.4f} ({self_check.verdict.value})")
    _say(args, f"Model:           {model_path}")
    _say(args, f"Key:             {key_path}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    report = verify_from_files(args.model, args.key, VerifyPolicy(threshold=args.threshold))
    _say(args, render_report(report))
    if args.out:
        print(write_report(report, args.out))
    return report.exit_code


def cmd_monitor(args: argparse.Namespace) -> int:
    reports = monitor_checkpoints(args.models, args.key, VerifyPolicy(threshold=args.threshold))
    for report in reports:
        _say(args, render_report(report))
        _say(args)
    if args.out:
        print(write_report(reports, args.out))
    tampered = sum(1 for report in reports if report.verdict is Verdict.TAMPERED)
    _say(args, f"{len(reports) - tampered} intact, {tampered} tampered")
    return EXIT_TAMPERED if tampered else EXIT_OK


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    """--config file (or defaults), with --seed and --jobs taking precedence."""
    if args.config:
        return load_experiment_config(args.config, seed=args.seed, jobs=args.jobs)
    raw = {"jobs": args.jobs if args.jobs is not None else get_settings().default_jobs}
    if args.seed is not None:
        raw["seed"] = args.seed
    return build_experiment_config(raw, source="defaults")


def _write_reports(args: argparse.Namespace, records, stem: str, report_type: str) -> Path:
    out_dir = _out(args, ".")
    emit_report(records, out_dir / f"{stem}.txt", "table_text", report_type)
    structured = emit_report(records, out_dir / f"{stem}.json", "structured", report_type)
    _say(args, render_table(records, report_type))
    print(structured)
    return structured


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    if args.kind == "epochs":
        records = run_epoch_sweep(cfg, progress=not args.quiet)
        stem = "epoch_sweep"
    else:
        records = run_key_length_sweep(cfg, progress=not args.quiet)
        stem = "key_length_sweep"

    _write_reports(args, records, stem, "sweep")
    if args.kind == "epochs":
        logger.info(f"Spearman(embed_epochs, shadow key accuracy) = {shadow_trend(records):.4f}")
    if records and all(record.succeeded == 0 for record in records):
        logger.error("every sweep point failed")
        return EXIT_ERROR
    return EXIT_OK


def cmd_resilience(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    records = run_finetune_resilience(cfg, progress=not args.quiet)
    _write_reports(args, records, "finetune_resilience", "resilience")
    return EXIT_OK


# ----------------------------
# PARSER
# ----------------------------

def _add_global_flags(parser: argparse.ArgumentParser, suppress: bool):
    """Global flags are accepted before or after the subcommand."""
    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--seed", type=int, default=default(None), help="Base seed (default 0)")
    parser.add_argument("--config", default=default(None), help="Experiment YAML file")
    parser.add_argument("--out", default=default(None),
                        help="Output file (train, gen-data, verify, monitor) or directory (sweep, resilience)")
    parser.add_argument("--quiet", action="store_true", default=default(False),
                        help="Only print structured report paths")
    parser.add_argument("--jobs", type=int, default=default(None), help="Parallel sweep workers")
    parser.add_argument("-v", "--verbose", action="store_true", default=default(False), help="Debug logging")


def _add_data_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--data", required=True, help="CSV file with a header row")
    parser.add_argument("--label", default=DATA_DEFAULTS["label_column"], help="Label column name")
    parser.add_argument("--test-fraction", type=float, default=DEFAULT_TEST_FRACTION,
                        help="Held-out fraction for test accuracy (default 0.2)")
    parser.add_argument("--batch-size", type=int, default=NETWORK_DEFAULTS["batch_size"])
    parser.add_argument("--lr", type=float, default=NETWORK_DEFAULTS["learning_rate"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="keymark",
        description="Integrity watermarks for feed-forward classifiers",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=(
            f"keymark {__version__} (checkpoint format {CHECKPOINT_FORMAT_VERSION}, "
            f"key format {KEY_FORMAT_VERSION}, report format {REPORT_FORMAT_VERSION})"
        ),
    )
    _add_global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _add_global_flags(common, suppress=True)

    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")

    gen = subparsers.add_parser("gen-data", parents=[common], help="Write a synthetic dataset")
    gen.add_argument("--kind", choices=[kind.value for kind in SyntheticKind], default=SyntheticKind.WATER_LIKE.value)
    gen.add_argument("--n", type=int, default=3276, help="Number of rows (>= 10)")
    gen.set_defaults(handler=cmd_gen_data)

    trn = subparsers.add_parser("train", parents=[common], help="Stage 1: regular training")
    _add_data_flags(trn)
    trn.add_argument("--spec", help="Architecture 'd:w1,act1:w2,act2:c' (default per --application)")
    trn.add_argument("--application", choices=sorted(NETWORK_DEFAULTS["architectures"]), default="water")
    trn.add_argument("--num-classes", type=int, default=DATA_DEFAULTS["num_classes"])
    trn.add_argument("--init-seed", type=int, default=NETWORK_DEFAULTS["init_seed"])
    trn.add_argument("--epochs", type=int, default=NETWORK_DEFAULTS["epochs"])
    trn.add_argument("--resume", help="Continue training this checkpoint")
    trn.set_defaults(handler=cmd_train)

    emb = subparsers.add_parser("embed", parents=[common], help="Stage 2: embed a watermark, write the key")
    emb.add_argument("--model", required=True, help="Trained checkpoint")
    _add_data_flags(emb)
    emb.add_argument("--k", type=int, default=WATERMARK_DEFAULTS["key_length"], help="Key length")
    emb.add_argument("--C", type=int, default=WATERMARK_DEFAULTS["pool_multiplier"], help="Pool multiplier")
    emb.add_argument("--embed-epochs", type=int, default=WATERMARK_DEFAULTS["embed_epochs"])
    emb.add_argument("--rule", choices=[rule.value for rule in SelectionRule],
                     default=WATERMARK_DEFAULTS["selection_rule"])
    emb.add_argument("--out-model", required=True, help="Watermarked checkpoint")
    emb.add_argument("--out-key", required=True, help="Key file")
    emb.set_defaults(handler=cmd_embed)

    ver = subparsers.add_parser("verify", parents=[common], help="Stage 3: verify one checkpoint")
    ver.add_argument("--model", required=True)
    ver.add_argument("--key", required=True)
    ver.add_argument("--threshold", type=float, default=VERIFY_DEFAULTS["threshold"])
    ver.set_defaults(handler=cmd_verify)

    mon = subparsers.add_parser("monitor", parents=[common], help="Verify a series of checkpoints")
    mon.add_argument("--key", required=True)
    mon.add_argument("--threshold", type=float, default=VERIFY_DEFAULTS["threshold"])
    mon.add_argument("models", nargs="+", help="Checkpoint files, in monitoring order")
    mon.set_defaults(handler=cmd_monitor)

    swp = subparsers.add_parser("sweep", parents=[common], help="Key-length or embedding-epoch sweep")
    swp.add_argument("--kind", choices=["key-length", "epochs"], default="key-length")
    swp.set_defaults(handler=cmd_sweep)

    res = subparsers.add_parser("resilience", parents=[common], help="Fine-tuning resilience experiment")
    res.set_defaults(handler=cmd_resilience)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if not e.code else EXIT_ERROR

    configure_logging(verbose=args.verbose, quiet=args.quiet)
    try:
        return args.handler(args)
    except (KeymarkError, OSError) as e:
        print(f"keymark {args.command}: error: {e}", file=sys.stderr)
        return EXIT_ERROR
