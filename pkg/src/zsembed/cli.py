"""Command line interface.

Subcommands: synth, build-vocab, build-parts, train, evaluate,
gradcheck, report. Every subcommand reads an optional ``--config`` file
and applies ``--set key=value`` overrides on top; ``--seed`` is a
shorthand overriding every seed key. Exit codes: 0 success, 1 data or
usage error, 2 internal error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .core import ConfigError, DataError, UsageError, ZsError
from .io import (
    RunConfig,
    apply_overrides,
    assemble_language_parts,
    build_dataset,
    load_config,
    load_cue_inputs,
    load_model,
    load_splits,
    metric_report_kv,
    metric_report_text,
    read_kv,
    save_attributes,
    save_features,
    save_language_parts,
    save_model,
    save_splits,
    save_vocabulary,
    save_word_vectors,
    train_log_lines,
    train_summary_kv,
)
from .langparts import AttributeTable, WordVectorTable, build_vocabulary
from .metrics import evaluate
from .oracle import generate, gradient_check
from .trainer import default_grid, train, validate_grid


class _ArgumentParser(argparse.ArgumentParser):
    """argparse that reports usage problems as UsageError (exit code 1)."""

    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(prog="zsembed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text, func in (
        ("synth", "generate a synthetic dataset and persist it", _cmd_synth),
        ("build-vocab", "build a vocabulary from the corpus directory", _cmd_build_vocab),
        ("build-parts", "build language parts for the configured cues", _cmd_build_parts),
        ("train", "train a model on the training split", _cmd_train),
        ("evaluate", "evaluate a trained model on the test split", _cmd_evaluate),
        ("gradcheck", "check analytic gradients against finite differences", _cmd_gradcheck),
        ("report", "render a saved metric report", _cmd_report),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="path to a key = value configuration file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one configuration key (repeatable)",
        )
        p.add_argument("--seed", type=int, help="override every seed key")
        p.set_defaults(func=func)
    return parser


def _load_run_config(args) -> RunConfig:
    values = load_config(args.config) if args.config else {}
    values = apply_overrides(values, args.overrides)
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("--seed must be non-negative")
        for key in ("train.seed", "synth.seed", "gradcheck.seed"):
            values[key] = str(args.seed)
    return RunConfig(values=values)


def _ensure_parent(path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _cmd_synth(args, cfg: RunConfig) -> int:
    spec = cfg.synth_spec()
    d, truth = generate(spec)

    for key in ("features", "splits", "word_vectors", "attributes"):
        _ensure_parent(cfg.path(key))
    save_features(cfg.path("features"), d.images)
    save_splits(cfg.path("splits"), d.split)

    attr_names = [f"attr{j:03d}" for j in range(truth.code_bits)]
    class_ids = sorted(truth.codes)
    vectors = {cid: truth.token_mixer @ truth.codes[cid] for cid in class_ids}
    for j, name in enumerate(attr_names):
        vectors[name] = truth.token_mixer[:, j]
    save_word_vectors(cfg.path("word_vectors"), WordVectorTable(vectors))

    table = AttributeTable(
        classes=tuple(class_ids),
        attributes=tuple(attr_names),
        strengths=np.stack([truth.codes[cid] * 100.0 for cid in class_ids]),
    )
    save_attributes(cfg.path("attributes"), table)

    print(f"wrote {len(d.images)} images to {cfg.path('features')}")
    print(f"wrote splits to {cfg.path('splits')}")
    print(f"wrote word vectors to {cfg.path('word_vectors')}")
    print(f"wrote attribute table to {cfg.path('attributes')}")
    return 0


def _cmd_build_vocab(args, cfg: RunConfig) -> int:
    from .io import load_corpus_dir

    corpus = load_corpus_dir(cfg.path("corpus_dir"))
    vocab = build_vocabulary(
        corpus.values(),
        min_df=cfg._int("vocab.min_df"),
        max_df_fraction=cfg._float("vocab.max_df_fraction"),
    )
    _ensure_parent(cfg.path("vocabulary"))
    save_vocabulary(cfg.path("vocabulary"), vocab)
    print(f"wrote {len(vocab)} terms to {cfg.path('vocabulary')}")
    return 0


def _cmd_build_parts(args, cfg: RunConfig) -> int:
    parts_path = cfg.path("parts")
    if not parts_path:
        raise ConfigError("set 'parts = <path>' to choose where to write the parts file")
    split = load_splits(cfg.path("splits"))
    attributes, word_vectors, vocabulary, corpus = load_cue_inputs(cfg)
    classes = assemble_language_parts(
        cfg,
        sorted(split.all_classes),
        attributes=attributes,
        word_vectors=word_vectors,
        vocabulary=vocabulary,
        corpus=corpus,
    )
    _ensure_parent(parts_path)
    save_language_parts(parts_path, classes)
    n_parts = sum(lps.n_parts for lps in classes.values())
    print(f"wrote {n_parts} parts for {len(classes)} classes to {parts_path}")
    return 0


def _cmd_train(args, cfg: RunConfig) -> int:
    d = build_dataset(cfg)
    train_cfg = cfg.train
    if cfg.grid:
        train_cfg = validate_grid(d, default_grid(), train_cfg)
        print(
            "grid best: margin_delta="
            f"{train_cfg.loss.margin_delta} learning_rate={train_cfg.learning_rate} "
            f"embed_dim={train_cfg.embed_dim}"
        )
    params, report = train(d, train_cfg)
    _ensure_parent(cfg.path("model"))
    save_model(cfg.path("model"), params)
    _ensure_parent(cfg.path("train_log"))
    Path(cfg.path("train_log")).write_text(
        "\n".join(train_log_lines(report)) + "\n", encoding="utf-8"
    )
    _ensure_parent(cfg.path("train_summary"))
    Path(cfg.path("train_summary")).write_text(train_summary_kv(report), encoding="utf-8")
    for line in train_log_lines(report):
        print(line)
    print(f"wrote model to {cfg.path('model')}")
    return 0


def _cmd_evaluate(args, cfg: RunConfig) -> int:
    d = build_dataset(cfg)
    params = load_model(cfg.path("model"))
    report = evaluate(d, params, part_mode=cfg.part_mode, retrieval=cfg.retrieval)
    test_images = d.images_for(d.split.test_classes)
    extras = {
        "part_mode": cfg.part_mode,
        "retrieval": cfg.retrieval,
        "n_test_classes": str(len(d.split.test_classes)),
        "n_test_images": str(len(test_images)),
    }
    _ensure_parent(cfg.path("report"))
    Path(cfg.path("report")).write_text(
        metric_report_text(report, extras), encoding="utf-8"
    )
    _ensure_parent(cfg.path("report_kv"))
    Path(cfg.path("report_kv")).write_text(
        metric_report_kv(report, extras), encoding="utf-8"
    )
    sys.stdout.write(metric_report_text(report, extras))
    return 0


def _cmd_gradcheck(args, cfg: RunConfig) -> int:
    result = gradient_check(
        n_instances=cfg._int("gradcheck.instances"),
        h=cfg._float("gradcheck.step"),
        tolerance=cfg._float("gradcheck.tolerance"),
        seed0=cfg._int("gradcheck.seed"),
    )
    for inst in result.instances:
        status = "ok" if inst.max_rel_err <= result.tolerance else "FAIL"
        print(
            f"instance seed={inst.seed}: max_rel_err={inst.max_rel_err:.3e} "
            f"checked={inst.n_checked} skipped_fields={inst.n_skipped_fields} [{status}]"
        )
    if result.passed:
        print(f"gradcheck passed ({result.n_checked} coordinates within {result.tolerance})")
        return 0
    print("gradcheck FAILED", file=sys.stderr)
    return 1


def _cmd_report(args, cfg: RunConfig) -> int:
    values = read_kv(cfg.path("report_kv"))
    width = max(len(k) for k in values)
    for key, value in values.items():
        print(f"{key.ljust(width)}  {value}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _load_run_config(args)
        return args.func(args, cfg)
    except (UsageError, DataError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ZsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
