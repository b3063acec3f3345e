"""Command-line driver: synth, train, eval, predict, inspect-attention."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import evaluator as E
from .config import TrainConfig, apply_overrides, dump_config, flat_items, read_config_file
from .corpus import (
    NA,
    CorpusFormatError,
    PackStats,
    RelationLabels,
    SentenceRecord,
    Vocab,
    build_vocab,
    load_pretrained_embeddings,
    load_riedel_file,
    pack_bags,
    write_riedel_file,
)
from .synthetic import generate_synthetic
from .trainer import (
    CheckpointError,
    Checkpoint,
    load_checkpoint,
    save_checkpoint,
    train,
)

log = logging.getLogger("transsa")

SYNTH = "synth"

# flags that name a TrainConfig field under a different spelling
ALIASES = {"embeddings": "embeddings_path", "labels": "labels_path"}


class CliError(Exception):
    pass


def synth_rng(seed: int) -> np.random.Generator:
    """Generator for synthetic data, separate from the training stream."""
    return np.random.default_rng([seed, 1])


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--embeddings", help="pretrained word vectors (text format)")
    p.add_argument("--labels", help="relation label file, one per line")
    seen = {"config", "set", "embeddings", "labels", "data", "out_dir", "checkpoint", "settings"}
    for key, value in flat_items(TrainConfig()):
        if key in seen:
            continue
        flag = "--" + key.replace("_", "-")
        p.add_argument(flag, dest=key, default=None, metavar=type(value).__name__.upper())


def _common(p: argparse.ArgumentParser):
    p.add_argument("--out-dir", default=".", help="directory for outputs")
    p.add_argument("--data", help=f"Riedel-format file, or '{SYNTH}' for generated data")
    p.add_argument("--checkpoint", help="checkpoint path")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="transsa", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _common(p)
    _add_config_flags(p)
    p.add_argument("--test-data", help="optional held-out file evaluated after training")

    p = sub.add_parser("eval", help="held-out evaluation")
    _common(p)
    p.add_argument("--settings", default="one,two,all")
    p.add_argument("--ns", default="100,200,300")
    p.add_argument("--seed", type=int, default=None, help="subsampling seed (default: checkpoint seed)")

    p = sub.add_parser("predict", help="predict relations for entity pairs")
    _common(p)
    p.add_argument("--full", action="store_true", help="print the whole distribution")

    p = sub.add_parser("inspect-attention", help="export attention weights for one bag")
    _common(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--bag", help="entity pair as 'entity1_id,entity2_id'")
    g.add_argument("--bag-index", type=int, default=0)
    p.add_argument("--relation", help="relation name to inspect (default: gold, else top)")

    p = sub.add_parser("synth", help="write a synthetic corpus in Riedel format")
    p.add_argument("--out-dir", default=".")
    _add_config_flags(p)
    return ap


# ---------------------------------------------------------------- config


def resolve_config(args) -> TrainConfig:
    """defaults < config file < flags."""
    overrides: dict[str, str] = {}
    if getattr(args, "config", None):
        overrides.update(read_config_file(args.config))
    for key, _ in flat_items(TrainConfig()):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = str(v)
    for flag, key in ALIASES.items():
        v = getattr(args, flag, None)
        if v is not None:
            overrides[key] = v
    for item in getattr(args, "set", []) or []:
        if "=" not in item:
            raise CliError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if getattr(args, "data", None):
        overrides["train_path"] = args.data
    try:
        cfg = apply_overrides(TrainConfig(), overrides)
        if cfg.train_path == SYNTH and "epochs" not in overrides:
            cfg.epochs = 15
        return cfg.validate()
    except (KeyError, ValueError) as exc:
        raise CliError(str(exc)) from exc


def _setup_logging(out_dir: Path, command: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    root = logging.getLogger()
    root.setLevel(logging.INFO)
    for h in list(root.handlers):
        if getattr(h, "_transsa", False):
            root.removeHandler(h)
            h.close()
    fh = logging.FileHandler(out_dir / f"{command}.log", mode="w", encoding="utf-8")
    fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    fh._transsa = True
    root.addHandler(fh)


def _echo_config(cfg: TrainConfig, out_dir: Path):
    text = dump_config(cfg)
    (out_dir / "config.txt").write_text(text, encoding="utf-8")
    log.info("effective config:\n%s", text)


# ---------------------------------------------------------------- data


def _load_records(path: str) -> list[SentenceRecord]:
    if not path or not Path(path).is_file():
        raise CliError(f"data file not found: {path!r} (pass --data FILE or --data {SYNTH})")
    stats: dict = {}
    recs = load_riedel_file(path, stats)
    log.info("%s: %d records, %d skipped", path, stats["records"], stats["skipped"])
    return recs


def _test_bags_for(ckpt: Checkpoint, data: str | None, for_predict: bool = False):
    """Bags for evaluation-style commands, encoded with the checkpoint's vocab."""
    cfg = ckpt.config
    vocab = Vocab(ckpt.vocab)
    labels = RelationLabels(list(ckpt.labels))
    if len(labels) != ckpt.params["b3"].shape[0]:
        raise CliError("checkpoint label list does not match its classifier size")
    if data == SYNTH or (data is None and cfg.train_path == SYNTH):
        syn = generate_synthetic(cfg.synth, synth_rng(cfg.seed), cfg.max_len, cfg.radius)
        records = syn.test_records
    else:
        records = _load_records(data or cfg.test_path)
    if for_predict:
        records = [SentenceRecord(r.entity1_id, r.entity2_id, r.entity1_name, r.entity2_name, NA, r.tokens)
                   for r in records]
    try:
        bags = pack_bags(records, vocab, labels, "test", cfg.max_len, cfg.radius)
    except KeyError as exc:
        raise E.LabelSetMismatch(str(exc)) from exc
    return bags, records, labels


def _load_ckpt(path: str | None) -> Checkpoint:
    if not path:
        raise CliError("--checkpoint is required")
    if not Path(path).is_file():
        raise CliError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out_dir)
    _setup_logging(out, "synth")
    _echo_config(cfg, out)
    syn = generate_synthetic(cfg.synth, synth_rng(cfg.seed), cfg.max_len, cfg.radius)
    write_riedel_file(out / "train.txt", syn.train_records)
    write_riedel_file(out / "test.txt", syn.test_records)
    (out / "labels.txt").write_text("".join(n + "\n" for n in syn.labels.names), encoding="utf-8")
    (out / "signal_train.txt").write_text("".join(f"{int(s)}\n" for s in syn.train_signal))
    (out / "signal_test.txt").write_text("".join(f"{int(s)}\n" for s in syn.test_signal))
    print(f"wrote {len(syn.train_records)} train / {len(syn.test_records)} test sentences to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    if not cfg.train_path:
        raise CliError(f"no training data: pass --data FILE or --data {SYNTH}")
    out = Path(args.out_dir)
    _setup_logging(out, "train")
    _echo_config(cfg, out)
    rng = np.random.default_rng(cfg.seed)

    test_bags = None
    if cfg.train_path == SYNTH:
        syn = generate_synthetic(cfg.synth, synth_rng(cfg.seed), cfg.max_len, cfg.radius, cfg.bag_key)
        vocab, labels, bags, test_bags = syn.vocab, syn.labels, syn.train_bags, syn.test_bags
    else:
        records = _load_records(cfg.train_path)
        labels = (RelationLabels.from_file(cfg.labels_path) if cfg.labels_path
                  else RelationLabels.discover(records))
        vocab = build_vocab(records, cfg.vocab_min_count)
        stats = PackStats()
        try:
            bags = pack_bags(records, vocab, labels, "train", cfg.max_len, cfg.radius, cfg.bag_key, stats)
        except KeyError as exc:
            raise CliError(str(exc)) from exc
        log.info("%d bags from %d sentences (%d dropped)", len(bags), stats.encoded, stats.dropped)
    log.info("vocab %d, labels %d, bags %d", len(vocab), len(labels), len(bags))

    word_vectors = None
    if cfg.embeddings_path:
        word_vectors = load_pretrained_embeddings(cfg.embeddings_path, vocab, cfg.d_w, rng)

    res = train(cfg, bags, len(vocab), len(labels), rng, word_vectors,
                vocab=vocab, labels=labels, out_dir=out,
                on_epoch=lambda e, l, lr: print(f"epoch {e}\tloss {l:.6f}\tlr {lr:g}", flush=True))
    ckpt_path = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.bin"
    save_checkpoint(res.checkpoint, ckpt_path)
    (out / "loss.log").write_text(res.loss_log(), encoding="utf-8")
    print(f"checkpoint written to {ckpt_path}")

    test_path = args.test_data
    if test_path:
        test_bags, _, _ = _test_bags_for(res.checkpoint, test_path)
    if test_bags:
        print(f"held-out bag accuracy\t{E.bag_accuracy(res.model, test_bags):.4f}")
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out_dir)
    _setup_logging(out, "eval")
    ckpt = _load_ckpt(args.checkpoint)
    model = ckpt.model()
    bags, _, labels = _test_bags_for(ckpt, args.data)
    seed = ckpt.config.seed if args.seed is None else args.seed
    settings = [s.strip().lower() for s in args.settings.split(",") if s.strip()]
    try:
        ns = [int(n) for n in args.ns.split(",") if n.strip()]
    except ValueError:
        raise CliError(f"--ns expects comma-separated integers, got {args.ns!r}") from None
    log.info("eval: %d bags, settings=%s, ns=%s, seed=%d", len(bags), settings, ns, seed)
    report = E.evaluate_settings(model, bags, settings, ns, rng=np.random.default_rng(seed))
    E.write_curve(report.curve, out / "curve.tsv")
    E.write_curve_sampled(report.curve, out / "curve_sampled.tsv")
    E.write_pan_report(report, out / "pan.tsv")
    for line in report.lines():
        print(line)
    print(f"bag_accuracy\t{E.bag_accuracy(model, bags):.4f}")
    for r in (0.1, 0.2, 0.3, 0.4):
        print(f"precision@recall{r}\t{report.curve.precision_at_recall(r):.4f}")
    return 0


def cmd_predict(args) -> int:
    ckpt = _load_ckpt(args.checkpoint)
    if not args.data:
        raise CliError("--data FILE is required")
    model = ckpt.model()
    try:
        bags, _, labels = _test_bags_for(ckpt, args.data, for_predict=True)
    except CorpusFormatError as exc:
        raise CliError(str(exc)) from exc
    probs = model.predict_proba(bags)
    for bag, p in zip(bags, probs):
        k = int(np.argmax(p))
        line = f"{bag.pair[0]}\t{bag.pair[1]}\t{bag.n}\t{labels.names[k]}\t{p[k]:.6f}"
        if args.full:
            line += "\t" + " ".join(f"{labels.names[j]}={p[j]:.6f}" for j in range(len(p)))
        print(line)
    return 0


def cmd_inspect(args) -> int:
    out = Path(args.out_dir)
    _setup_logging(out, "inspect")
    ckpt = _load_ckpt(args.checkpoint)
    model = ckpt.model()
    bags, records, labels = _test_bags_for(ckpt, args.data)
    if args.bag:
        pair = tuple(x.strip() for x in args.bag.split(","))
        found = [b for b in bags if b.pair == pair]
        if not found:
            raise CliError(f"bag {args.bag!r} not found")
        bag = found[0]
    else:
        if not 0 <= args.bag_index < len(bags):
            raise CliError(f"bag index {args.bag_index} out of range [0, {len(bags)})")
        bag = bags[args.bag_index]
    relation = None
    if args.relation:
        if args.relation not in labels.index:
            raise CliError(f"unknown relation {args.relation!r}")
        relation = labels.index[args.relation]
    ins = E.inspect_bag(model, bag, relation)
    tokens = [records[i].tokens for i in bag.record_ids]
    path = out / f"attention_{bag.pair[0]}_{bag.pair[1]}.tsv".replace("/", "_").lstrip("_")
    E.write_inspection(ins, path, tokens)
    print(f"# {labels.names[ins.relation]}\tp={ins.bag_probs[ins.relation]:.6e}")
    for i, (a, r) in enumerate(zip(ins.alpha, ins.sentence_rank)):
        print(f"{i}\t{a:.6f}\t{int(r)}\t{' '.join(tokens[i])}")
    print(f"written {path}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "inspect-attention": cmd_inspect,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (CliError, CheckpointError, E.LabelSetMismatch, CorpusFormatError, OSError,
            ValueError, FloatingPointError) as exc:
        print(f"transsa {args.command}: error: {exc}", file=sys.stderr)
        if isinstance(exc, CliError):
            parser.print_usage(sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
