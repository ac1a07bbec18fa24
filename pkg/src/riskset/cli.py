"""Command-line pipeline: synth | embed | train | eval | predict | gradcheck.

Structured results go to stdout as JSON lines so downstream scripts can
parse them; human-readable progress and tables go to stderr. Exit codes:
0 success, 1 usage error, 2 data error, 3 verification failure.

Every flag can also come from a ``--config`` file of ``key = value``
lines (keys use underscores); explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import __version__
from .corpus import (
    CorpusFormatError,
    LABEL_NAMES,
    SplitSpec,
    SyntheticTruth,
    encode_corpus,
    generate_synthetic,
    load_corpus,
    marker_oracle,
    save_corpus,
    split_stratified,
)
from .embeddings import load_embeddings, save_embeddings, train_skipgram, vocab_from_embeddings
from .gradcheck import run_model_gradient_checks
from .metrics import Metrics
from .models import KINDS, ModelConfig, load_model, save_model
from .training import TrainConfig, TrainingDiverged, evaluate, fit, predict_records

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFICATION = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse defaults to exit code 2; the contract reserves 2 for data errors
    def error(self, message):
        raise UsageError(message)


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True))


def _load_config_tokens(path) -> list[str]:
    """Turn a flat key = value file into CLI tokens (inserted before the
    real flags, so the command line wins on conflicts)."""
    tokens: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise CorpusFormatError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in text.split("=", 1))
            flag = "--" + key.replace("_", "-")
            if value.lower() in ("true", "false"):
                if value.lower() == "true":
                    tokens.append(flag)
            else:
                tokens.extend([flag, value])
    return tokens


def _split_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--train-ratio", type=float, default=0.9, help="train share of the corpus")
    parser.add_argument("--validation-fraction", type=float, default=0.1, help="validation share of train")


def build_parser() -> _Parser:
    parser = _Parser(prog="riskset", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"riskset {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate a synthetic corpus with recoverable labels")
    p.add_argument("--out", required=True, help="corpus file to write (JSON lines)")
    p.add_argument("--truth", default=None, help="ground-truth sidecar path (default: <out>.truth.json)")
    p.add_argument("--users", type=int, default=200)
    p.add_argument("--positive-fraction", type=float, default=0.15)
    p.add_argument("--marker-rate", type=float, default=0.5)
    p.add_argument("--vocab-size", type=int, default=100)
    p.add_argument("--min-writings", type=int, default=10)
    p.add_argument("--max-writings", type=int, default=40)
    p.add_argument("--min-length", type=int, default=5)
    p.add_argument("--max-length", type=int, default=15)
    p.add_argument("--marker-token", default="xmarker")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("embed", help="pretrain skip-gram token vectors on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="embedding table to write")
    p.add_argument("--dim", type=int, default=20)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--max-vocab", type=int, default=40000)
    p.add_argument("--batch-pairs", type=int, default=4096, help="pair minibatch size; small corpora want smaller chunks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)

    p = sub.add_parser("train", help="train a classifier and keep the best-on-validation snapshot")
    p.add_argument("--corpus", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True, help="model checkpoint to write")
    p.add_argument("--log", default=None, help="training log file (JSON lines)")
    p.add_argument("--model", choices=KINDS, default="ida")
    p.add_argument("--attention", choices=("general", "dot", "location", "additive", "cosine", "none"), default="general")
    p.add_argument("--attn-dim", type=int, default=None)
    p.add_argument("--intra-query", choices=("previous", "two_pass"), default="previous")
    p.add_argument("--hidden", type=int, default=80)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--class-weighting", choices=("inverse", "none"), default="inverse")
    p.add_argument("--sample-k", type=int, default=30)
    p.add_argument("--max-len", type=int, default=66)
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    p.add_argument("--fine-tune-embeddings", action="store_true")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    _split_args(p)

    p = sub.add_parser("eval", help="score a checkpoint (or the marker oracle) on a corpus split")
    p.add_argument("--model", default=None, help="model checkpoint")
    p.add_argument("--oracle", default=None, help="ground-truth sidecar: score the marker-presence oracle instead")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "validation", "test", "all"), default="test")
    p.add_argument("--sample-k", type=int, default=None, help="default: from the checkpoint")
    p.add_argument("--max-len", type=int, default=None, help="default: from the checkpoint")
    p.add_argument("--seed", type=int, default=0, help="split seed; match the training run")
    p.add_argument("--config", default=None)
    _split_args(p)

    p = sub.add_parser("predict", help="per-user probability and label for a corpus file")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True, help="corpus file; labels optional")
    p.add_argument("--sample-k", type=int, default=None)
    p.add_argument("--max-len", type=int, default=None)

    p = sub.add_parser("gradcheck", help="verify reverse-mode gradients against finite differences")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--eps", type=float, default=3e-4)
    p.add_argument("--seed", type=int, default=0)

    return parser


def cmd_synth(args) -> int:
    if args.min_writings > args.max_writings or args.min_length > args.max_length:
        raise UsageError("min-writings/min-length must not exceed their max counterparts")
    records, truth = generate_synthetic(
        n_users=args.users,
        positive_fraction=args.positive_fraction,
        marker_rate=args.marker_rate,
        vocab_size=args.vocab_size,
        rng=np.random.default_rng(args.seed),
        writings_range=(args.min_writings, args.max_writings),
        length_range=(args.min_length, args.max_length),
        marker_token=args.marker_token,
    )
    save_corpus(records, args.out)
    truth_path = args.truth or args.out + ".truth.json"
    with open(truth_path, "w", encoding="utf-8") as fh:
        fh.write(truth.to_json() + "\n")
    _say(f"wrote {len(records)} users to {args.out} (truth: {truth_path})")
    _emit({"command": "synth", "users": len(records), "corpus": args.out, "truth": truth_path})
    return EXIT_OK


def cmd_embed(args) -> int:
    records = load_corpus(args.corpus)
    from .corpus import build_vocab

    vocab = build_vocab(records, max_size=args.max_vocab)
    encoded = encode_corpus(records, vocab)
    started = time.perf_counter()
    matrix = train_skipgram(
        [w for r in encoded for w in r.writings],
        vocab,
        dim=args.dim,
        window=args.window,
        negatives=args.negatives,
        epochs=args.epochs,
        rng=np.random.default_rng(args.seed),
        learning_rate=args.learning_rate,
        batch_pairs=args.batch_pairs,
    )
    save_embeddings(matrix, args.out)
    _say(f"trained {matrix.rows}x{matrix.dim} embeddings in {time.perf_counter() - started:.1f}s -> {args.out}")
    _emit({"command": "embed", "rows": matrix.rows, "dim": matrix.dim, "out": args.out})
    return EXIT_OK


def _load_splits(args, vocab):
    records = load_corpus(args.corpus)
    encoded = encode_corpus(records, vocab)
    spec = SplitSpec(args.train_ratio, args.validation_fraction, args.seed)
    return split_stratified(encoded, spec)


def cmd_train(args) -> int:
    if args.model in ("ida", "iida") and args.attention == "none":
        raise UsageError(f"model '{args.model}' requires an attention variant (field: attention)")
    matrix = load_embeddings(args.embeddings)
    vocab = vocab_from_embeddings(matrix)
    train_split, validation, _test = _load_splits(args, vocab)
    model_config = ModelConfig(
        kind=args.model,
        embed_dim=matrix.dim,
        hidden_dim=args.hidden,
        attention=args.attention if args.attention != "none" else "general",
        attn_dim=args.attn_dim,
        intra_query=args.intra_query,
        fine_tune_embeddings=args.fine_tune_embeddings,
        dtype=args.dtype,
        max_len=args.max_len,
        sample_k=args.sample_k,
    )
    train_config = TrainConfig(
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        seed=args.seed,
        class_weighting=args.class_weighting,
        clip_norm=args.clip_norm,
        threads=args.threads,
    )
    started = time.perf_counter()
    try:
        result = fit(train_config, model_config, train_split, validation, matrix, vocab)
    except TrainingDiverged as err:
        if args.log:
            _write_log(err.log, args.log)
        raise
    elapsed = time.perf_counter() - started
    save_model(result.model, args.out)
    if args.log:
        _write_log(result.log, args.log)
    counts = result.model.parameter_counts()
    _say(
        f"trained {args.model} ({counts['total']} parameters) for {len(result.log)} epochs "
        f"in {elapsed:.1f}s; best epoch {result.best_epoch} val_f1={result.best_f1:.4f}"
    )
    _emit(
        {
            "command": "train",
            "model": args.model,
            "parameters": counts["total"],
            "best_epoch": result.best_epoch,
            "best_val_f1": result.best_f1,
            "checkpoint": args.out,
        }
    )
    return EXIT_OK


def _write_log(log: list[dict], path) -> None:
    # wall time stays on the console: the persisted log must be
    # byte-identical across reruns with the same seed
    with open(path, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


def _metrics_table(metrics: Metrics) -> str:
    return (
        f"  users      {metrics.total}\n"
        f"  TP/FP/TN/FN  {metrics.tp}/{metrics.fp}/{metrics.tn}/{metrics.fn}\n"
        f"  precision  {metrics.precision:.4f}\n"
        f"  recall     {metrics.recall:.4f}\n"
        f"  f1         {metrics.f1:.4f}"
    )


def cmd_eval(args) -> int:
    if (args.model is None) == (args.oracle is None):
        raise UsageError("exactly one of --model or --oracle is required (field: model)")
    if args.oracle is not None:
        with open(args.oracle, "r", encoding="utf-8") as fh:
            truth = SyntheticTruth.from_json(fh.read())
        records = load_corpus(args.corpus)
        if args.split != "all":
            raise UsageError("--oracle evaluates the whole file; use --split all (field: split)")
        predictions = marker_oracle(records, truth.marker_token)
        labels = [r.label for r in records]
        metrics = Metrics.from_predictions(predictions, labels)
        scored = "oracle"
    else:
        model = load_model(args.model)
        sample_k = args.sample_k or model.config.sample_k
        max_len = args.max_len or model.config.max_len
        if args.split == "all":
            split = encode_corpus(load_corpus(args.corpus), model.vocab)
        else:
            train_split, validation, test = _load_splits(args, model.vocab)
            split = {"train": train_split, "validation": validation, "test": test}[args.split]
        metrics = evaluate(model, split, max_len=max_len, sample_k=sample_k)
        scored = args.model
    _say(f"eval of {scored} on split '{args.split}':")
    _say(_metrics_table(metrics))
    _emit({"command": "eval", "split": args.split, **metrics.as_dict()})
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    sample_k = args.sample_k or model.config.sample_k
    max_len = args.max_len or model.config.max_len
    records = encode_corpus(load_corpus(args.corpus, require_label=False), model.vocab)
    for pred in predict_records(model, records, max_len=max_len, sample_k=sample_k):
        _emit(
            {
                "user_id": pred.user_id,
                "probability": pred.probability,
                "label": LABEL_NAMES[pred.label],
            }
        )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    reports = run_model_gradient_checks(tolerance=args.tolerance, eps=args.eps, seed=args.seed)
    worst = 0.0
    ok = True
    for kind, report in reports.items():
        _say(f"{kind:>5}: {report.summary()}")
        _emit(
            {
                "command": "gradcheck",
                "model": kind,
                "max_relative_error": report.max_relative_error,
                "tolerance": report.tolerance,
                "passed": report.passed,
            }
        )
        worst = max(worst, report.max_relative_error)
        ok = ok and report.passed
    _say(f"overall max relative error {worst:.3e} ({'PASS' if ok else 'FAIL'})")
    return EXIT_OK if ok else EXIT_VERIFICATION


COMMANDS = {
    "synth": cmd_synth,
    "embed": cmd_embed,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        # expand --config before the real parse so explicit flags win
        if "--config" in argv:
            at = argv.index("--config")
            if at + 1 >= len(argv):
                raise UsageError("--config needs a path")
            config_tokens = _load_config_tokens(argv[at + 1])
            head, tail = argv[: at + 2], argv[at + 2 :]
            argv = [argv[0]] + config_tokens + head[1:] + tail
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as err:
        _say(f"riskset: usage error: {err}")
        return EXIT_USAGE
    except TrainingDiverged as err:
        _say(f"riskset: {err}")
        return EXIT_DATA
    except (CorpusFormatError, FileNotFoundError, IsADirectoryError, ValueError) as err:
        _say(f"riskset: data error: {err}")
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
