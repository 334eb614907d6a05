"""Command-line interface: ``seqattn <subcommand> ...``.

Every subcommand accepts ``--config file.json``; keys are the long flag
names with dashes replaced by underscores, and explicit flags win.
Relative input paths that do not exist are looked up under
``$SEQATTN_DATA_DIR`` when it is set.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as D
from .reader import VARIANTS, ReaderConfig, build_model, count_parameters, load_checkpoint, save_checkpoint
from .training import (
    TrainConfig,
    dump_attention,
    evaluate_accuracy,
    format_grid,
    run_grid,
    train,
)

log = logging.getLogger("seqattn")

DATA_DIR_ENV = "SEQATTN_DATA_DIR"


class CliError(Exception):
    pass


def resolve(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    base = os.environ.get(DATA_DIR_ENV)
    if not p.is_absolute() and not p.exists() and base:
        return Path(base) / p
    return p


# ---------------------------------------------------------------------------
# shared flag groups


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--variant", choices=list(VARIANTS), default="sr-bilinear")
    g.add_argument("--vocab-size", type=int, default=50_000)
    g.add_argument("--embed-dim", type=int, default=100)
    g.add_argument("--hidden", type=int, default=128)
    g.add_argument("--attn-hidden", type=int, default=None, help="per-direction attention RNN size (default: --hidden)")
    g.add_argument("--max-entities", type=int, default=None, help="entity columns (default: from the data)")
    g.add_argument("--embeddings", default=None, help="pretrained vector file (token + floats per line)")
    g.add_argument("--random-embedding-std", type=float, default=None,
                   help="draw embeddings from N(0, std^2) instead of U(-0.01, 0.01) when no vector file is given")


def _train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--lr", type=float, default=0.1)
    g.add_argument("--batch-size", type=int, default=32)
    g.add_argument("--clip-norm", type=float, default=10.0)
    g.add_argument("--dropout", type=float, default=0.2)
    g.add_argument("--epochs", type=int, default=30)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--patience", type=int, default=None)


def _train_config(a) -> TrainConfig:
    return TrainConfig(lr=a.lr, batch_size=a.batch_size, clip_norm=a.clip_norm, dropout=a.dropout,
                       epochs=a.epochs, seed=a.seed, patience=a.patience)


def _load(path) -> list[D.ClozeExample]:
    p = resolve(path)
    if p is None or not p.exists():
        raise CliError(f"no such dataset: {path}")
    return D.read_dataset(p)


def _max_entity(examples) -> int:
    top = -1
    for ex in examples:
        for t in ex.passage + ex.question + [ex.answer]:
            if D.is_entity(t):
                top = max(top, D.entity_index(t))
    return top + 1


def _prepare(a, train_examples, extra_sets=()):
    """Vocabulary, reader config and embedding initialiser for training commands."""
    max_entities = a.max_entities or max(_max_entity(train_examples + [e for s in extra_sets for e in s]), 1)
    vocab = D.build_vocabulary(D.dataset_tokens(train_examples), a.vocab_size, entity_count=max_entities)
    cfg = ReaderConfig.for_variant(
        a.variant, vocab_size=len(vocab), embed_dim=a.embed_dim, hidden=a.hidden,
        attn_hidden=a.attn_hidden, max_entities=max_entities, dropout=a.dropout, seed=a.seed,
    )
    rng = np.random.default_rng([a.seed, 7])
    if a.embeddings:
        table, cov = D.load_pretrained_embeddings(resolve(a.embeddings), vocab, a.embed_dim, rng)
        log.info("pretrained vectors cover %d/%d tokens (%.1f%%)", cov.found, cov.total, 100 * cov.ratio)
    elif a.random_embedding_std is not None:
        table = rng.normal(0.0, a.random_embedding_std, (len(vocab), a.embed_dim))
    else:
        table = None
    return vocab, cfg, table


# ---------------------------------------------------------------------------
# subcommands


def cmd_import(a) -> int:
    sources = []
    for src in a.sources:
        p = resolve(src)
        if p is None or not p.exists():
            raise CliError(f"no such file or directory: {src}")
        sources += sorted(p.glob("*.question")) if p.is_dir() else [p]
    examples = [D.import_cnn_format(path, k) for k, path in enumerate(sources)]
    if a.validate:
        examples, report = D.validate_examples(examples)
        print(json.dumps({"total": report.total, "kept": report.kept, "dropped": report.n_dropped}))
    if a.relabel:
        examples = [D.relabel_entities(ex) for ex in examples]
    D.write_dataset(examples, a.out)
    log.info("wrote %d examples to %s", len(examples), a.out)
    return 0


def cmd_validate(a) -> int:
    examples = _load(a.data)
    kept, report = D.validate_examples(examples)
    if a.relabel:
        kept = [D.relabel_entities(ex) for ex in kept]
    if a.out:
        D.write_dataset(kept, a.out)
    print(json.dumps({"total": report.total, "kept": report.kept, "dropped": report.n_dropped,
                      "reasons": report.by_reason(), "dropped_ids": [i for i, _ in report.dropped]}))
    return 0


def cmd_gen_synthetic(a) -> int:
    spec = D.SyntheticTaskSpec(
        rule=a.rule, num_examples=a.num_examples, num_entities=a.num_entities,
        passage_length=tuple(a.passage_length), question_length=tuple(a.question_length),
        num_fillers=a.num_fillers, num_markers=a.num_markers, seed=a.seed,
    )
    D.write_dataset(D.generate_synthetic_task(spec), a.out)
    return 0


def cmd_train(a) -> int:
    train_examples = _load(a.train)
    dev_examples = _load(a.dev) if a.dev else train_examples
    vocab, cfg, table = _prepare(a, train_examples, [dev_examples])
    model = build_model(cfg, table)
    tcfg = _train_config(a)
    metrics_fh = open(a.metrics, "w", encoding="utf-8") if a.metrics else None
    try:
        def on_epoch(rec):
            if metrics_fh:
                metrics_fh.write(rec.to_json() + "\n")
                metrics_fh.flush()

        if tcfg.epochs:
            result = train(model, D.encode_dataset(train_examples, vocab, cfg.max_entities),
                           D.encode_dataset(dev_examples, vocab, cfg.max_entities), tcfg, on_epoch)
            extra = {"best_epoch": result.best_epoch, "best_dev_accuracy": result.best_dev_accuracy}
        else:
            extra = {"best_epoch": 0}
    finally:
        if metrics_fh:
            metrics_fh.close()
    save_checkpoint(a.out, model, vocab, extra)
    log.info("checkpoint written to %s", a.out)
    return 0


def _restore(a):
    model, vocab, _ = load_checkpoint(resolve(a.checkpoint))
    if vocab is None:
        raise CliError(f"{a.checkpoint} carries no vocabulary")
    return model, vocab


def cmd_eval(a) -> int:
    model, vocab = _restore(a)
    examples, report = D.validate_examples(_load(a.data))
    encoded = D.encode_dataset(examples, vocab, model.config.max_entities)
    acc, preds = evaluate_accuracy(model, encoded)
    print(json.dumps({"accuracy": acc, "examples": len(encoded), "dropped": report.n_dropped}))
    if a.predictions:
        with open(a.predictions, "w", encoding="utf-8") as fh:
            for i in sorted(preds):
                fh.write(json.dumps({"id": i, "prediction": f"@entity{preds[i]}"}) + "\n")
    return 0


def cmd_grid(a) -> int:
    tr, dv, te = _load(a.train), _load(a.dev), _load(a.test)
    vocab, cfg, table = _prepare(a, tr, [dv, te])
    enc = lambda xs: D.encode_dataset(xs, vocab, cfg.max_entities)  # noqa: E731
    rows = run_grid(cfg, enc(tr), enc(dv), enc(te), _train_config(a), embeddings=table)
    print(format_grid(rows))
    if a.out:
        with open(a.out, "w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(json.dumps(r.__dict__) + "\n")
    return 0


def cmd_dump_attention(a) -> int:
    model, vocab = _restore(a)
    examples = {ex.id: ex for ex in _load(a.data)}
    if a.example_id not in examples:
        raise CliError(f"example id {a.example_id} not found in {a.data}")
    enc = D.encode_example(examples[a.example_id], vocab, model.config.max_entities)
    dump_attention(model, enc, a.out, vocab)
    return 0


def cmd_count_params(a) -> int:
    if a.preset == "paper":
        cfg = ReaderConfig.paper(a.variant)
    else:
        cfg = ReaderConfig.for_variant(
            a.variant, vocab_size=a.vocab_size, embed_dim=a.embed_dim, hidden=a.hidden,
            attn_hidden=a.attn_hidden, max_entities=a.max_entities or 10,
        )
    count = count_parameters(cfg)
    if a.json:
        print(json.dumps({"variant": a.variant, "total": count.total, "groups": count.groups}))
    else:
        print(f"{a.variant}")
        print(count)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqattn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="JSON file of flag defaults")
        p.set_defaults(func=fn)
        return p

    p = add("import", cmd_import, "convert CNN question files to the canonical format")
    p.add_argument("sources", nargs="+", help=".question files or directories of them")
    p.add_argument("--out", required=True)
    p.add_argument("--validate", action="store_true", help="drop unanswerable examples")
    p.add_argument("--relabel", action="store_true", help="renumber entities by first occurrence")

    p = add("validate", cmd_validate, "drop unanswerable examples and report")
    p.add_argument("data")
    p.add_argument("--out", default=None)
    p.add_argument("--relabel", action="store_true")

    p = add("gen-synthetic", cmd_gen_synthetic, "write a synthetic cloze dataset")
    p.add_argument("--rule", choices=[D.POSITIONAL, D.TRIGGER], default=D.POSITIONAL)
    p.add_argument("--num-examples", type=int, default=1000)
    p.add_argument("--num-entities", type=int, default=4)
    p.add_argument("--passage-length", type=int, nargs=2, default=[16, 24])
    p.add_argument("--question-length", type=int, nargs=2, default=[6, 8])
    p.add_argument("--num-fillers", type=int, default=40)
    p.add_argument("--num-markers", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train one model")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", default=None)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", default=None, help="per-epoch metrics log (JSON lines)")
    _model_flags(p)
    _train_flags(p)

    p = add("eval", cmd_eval, "accuracy of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--predictions", default=None)

    p = add("grid", cmd_grid, "train and compare all six variants")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", default=None)
    _model_flags(p)
    _train_flags(p)

    p = add("dump-attention", cmd_dump_attention, "write attention weights for one example")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--example-id", type=int, required=True)
    p.add_argument("--out", required=True)

    p = add("count-params", cmd_count_params, "trainable parameter count and breakdown")
    p.add_argument("--preset", choices=["paper", "none"], default="none")
    p.add_argument("--json", action="store_true")
    _model_flags(p)
    return parser


def _apply_config(parser, args, argv):
    if not getattr(args, "config", None):
        return args
    with open(resolve(args.config), encoding="utf-8") as fh:
        defaults = json.load(fh)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in subparser._actions}
    unknown = set(defaults) - known
    if unknown:
        raise CliError(f"unknown config keys: {', '.join(sorted(unknown))}")
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args = _apply_config(parser, args, argv)
        return args.func(args)
    except (CliError, D.ParseError, D.InvalidExampleError, ValueError, OSError) as exc:
        print(f"seqattn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
