"""Command-line surface: build, detect, pretrain, probe, export-plots.

Exit codes: 0 success, 2 usage or configuration, 3 data/parse/shape,
4 numerical failure. Every command writes a run manifest (resolved config and
input digests) into its output directory before doing any work. Dotted-key
overrides like ``--train.lambda1 0.4`` patch the config file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import corpus as corpus_mod
from .config import RunConfig, load_run_config
from .detector import detect, report_record
from .errors import ConfigError, DataError, KelpError
from .kg import export_tables, load_kg
from .manifest import write_manifest
from .model import init_model, load_checkpoint
from .probe import evaluate, load_probes, write_result
from .training import train


def _require(path: str, what: str) -> str:
    if path is None or not os.path.exists(path):
        raise ConfigError(f"missing {what}: {path}")
    return path


def _parse_overrides(extras: list[str]) -> list[tuple[str, str]]:
    overrides = []
    i = 0
    while i < len(extras):
        key = extras[i]
        if not key.startswith("--") or i + 1 >= len(extras):
            raise ConfigError(f"unrecognized argument {key!r} (expected --section.field value)")
        overrides.append((key[2:], extras[i + 1]))
        i += 2
    return overrides


def _load_build(build_dir: str, kg):
    vocab = corpus_mod.Vocabulary.load(_require(os.path.join(build_dir, "vocab.tsv"), "vocab"))
    freq = corpus_mod.FrequencyTable.load(
        _require(os.path.join(build_dir, "freq.tsv"), "frequency table"), kg
    )
    return vocab, freq


def cmd_build(args, cfg: RunConfig) -> int:
    corpus_path = _require(args.corpus, "corpus file")
    triples_path = _require(args.triples, "triples file")
    desc_path = _require(args.descriptions, "descriptions file") if args.descriptions else None
    inputs = {"corpus": corpus_path, "triples": triples_path}
    if desc_path:
        inputs["descriptions"] = desc_path
    write_manifest(args.out, "build", cfg.to_dict(), inputs)

    kg = load_kg(triples_path, desc_path)
    lines = corpus_mod.read_corpus_lines(corpus_path)
    if not lines:
        raise DataError("empty corpus")
    vocab = corpus_mod.build_vocabulary(lines, kg)
    linked = [
        corpus_mod.link_entities(line, kg, vocab, max_len=cfg.encoder.max_len, sent_id=i)
        for i, line in enumerate(lines)
    ]
    freq = corpus_mod.count_frequencies(linked)

    vocab.save(os.path.join(args.out, "vocab.tsv"))
    freq.save(os.path.join(args.out, "freq.tsv"), kg)
    export_tables(
        kg, os.path.join(args.out, "entities.tsv"), os.path.join(args.out, "relations.tsv")
    )
    try:
        fit = corpus_mod.fit_power_law(freq)
        payload = {"C": fit.c, "alpha": fit.alpha, "r_squared": fit.r_squared}
    except DataError:
        payload = {"C": None, "alpha": None, "r_squared": None, "degenerate": True}
        print("warning: frequency table too degenerate for a power-law fit", file=sys.stderr)
    with open(os.path.join(args.out, "powerlaw.json"), "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    n_truncated = sum(1 for s in linked if s.truncated)
    if n_truncated:
        print(f"warning: truncated {n_truncated} overlong sentences", file=sys.stderr)
    return 0


def cmd_detect(args, cfg: RunConfig) -> int:
    build_dir = _require(args.build, "build directory")
    triples_path = _require(args.triples, "triples file")
    sentences_path = _require(args.sentences, "sentences file")
    inputs = {"triples": triples_path, "sentences": sentences_path}
    if args.checkpoint:
        inputs["checkpoint"] = _require(args.checkpoint, "checkpoint")
    write_manifest(args.out, "detect", cfg.to_dict(), inputs)

    kg = load_kg(triples_path, args.descriptions)
    vocab, freq = _load_build(build_dir, kg)
    if args.checkpoint:
        bundle = load_checkpoint(args.checkpoint)
        if bundle.config.vocab_size != len(vocab):
            raise DataError(
                f"checkpoint vocab size {bundle.config.vocab_size} != vocabulary {len(vocab)}"
            )
        model_source = args.checkpoint
    else:
        cfg.encoder.vocab_size = len(vocab)
        bundle = init_model(cfg.encoder, seed=cfg.seed)
        model_source = f"random-init(seed={cfg.seed})"
    lines = corpus_mod.read_corpus_lines(sentences_path)
    out_path = os.path.join(args.out, "detections.jsonl")
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"model": model_source}) + "\n")
        for i, line in enumerate(lines):
            sent = corpus_mod.link_entities(line, kg, vocab, max_len=cfg.encoder.max_len, sent_id=i)
            report = detect(sent, kg, freq, bundle.encoder, cfg.detect)
            f.write(json.dumps(report_record(report, kg)) + "\n")
    return 0


def cmd_pretrain(args, cfg: RunConfig) -> int:
    corpus_path = _require(args.corpus, "corpus file")
    triples_path = _require(args.triples, "triples file")
    build_dir = _require(args.build, "build directory")
    desc_path = _require(args.descriptions, "descriptions file") if args.descriptions else None
    inputs = {"corpus": corpus_path, "triples": triples_path}
    if desc_path:
        inputs["descriptions"] = desc_path
    write_manifest(args.out, "pretrain", cfg.to_dict(), inputs)

    kg = load_kg(triples_path, desc_path)
    vocab, freq = _load_build(build_dir, kg)
    cfg.encoder.vocab_size = len(vocab)
    linked = corpus_mod.load_corpus(corpus_path, kg, vocab, max_len=cfg.encoder.max_len)
    bundle = init_model(cfg.encoder, seed=cfg.seed)
    result = train(linked, kg, vocab, freq, bundle, cfg.train, cfg.detect, args.out)
    print(
        json.dumps(
            {
                "final_checkpoint": result.final_checkpoint,
                "metrics": result.metrics_path,
                "steps": result.steps_completed,
            }
        )
    )
    return 0


def cmd_probe(args, cfg: RunConfig) -> int:
    checkpoint_path = _require(args.checkpoint, "checkpoint")
    probes_path = _require(args.probes, "probe file")
    vocab_path = _require(args.vocab, "vocabulary file")
    write_manifest(
        args.out,
        "probe",
        cfg.to_dict(),
        {"checkpoint": checkpoint_path, "probes": probes_path, "vocab": vocab_path},
    )
    with open(probes_path, encoding="utf-8") as f:
        if not any(line.strip() for line in f):
            raise ConfigError(f"empty probe file: {probes_path}")
    vocab = corpus_mod.Vocabulary.load(vocab_path)
    bundle = load_checkpoint(checkpoint_path)
    if bundle.config.vocab_size != len(vocab):
        raise DataError(
            f"checkpoint vocab size {bundle.config.vocab_size} != vocabulary {len(vocab)}"
        )
    queries = load_probes(probes_path, vocab)
    result = evaluate(bundle.encoder, queries)
    write_result(
        result,
        os.path.join(args.out, "probe_result.json"),
        os.path.join(args.out, "probe_ranks.tsv"),
    )
    print(json.dumps(result.to_json(), sort_keys=True))
    return 0


def cmd_export_plots(args, cfg: RunConfig) -> int:
    build_dir = _require(args.build, "build directory")
    freq_path = _require(os.path.join(build_dir, "freq.tsv"), "frequency table")
    write_manifest(args.out, "export-plots", cfg.to_dict(), {"freq": freq_path})
    rows = []
    with open(freq_path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            name, count = line.split("\t")
            rows.append((name, float(count)))
    rows.sort(key=lambda nc: (-nc[1], nc[0]))
    out_path = os.path.join(args.out, "rank_freq.tsv")
    with open(out_path, "w", encoding="utf-8") as f:
        f.write("rank\tfreq\tentity\n")
        for rank, (name, count) in enumerate(rows, 1):
            f.write(f"{rank}\t{count}\t{name}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kelp", description="knowledge-injection pretraining pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON run config")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("build", help="vocabulary, frequency table, power-law report")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--descriptions", default=None)
    p.set_defaults(handler=cmd_build)

    p = sub.add_parser("detect", help="long-tail detection reports as JSON lines")
    common(p)
    p.add_argument("--build", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--descriptions", default=None)
    p.add_argument("--sentences", required=True)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(handler=cmd_detect)

    p = sub.add_parser("pretrain", help="run the pretraining loop")
    common(p)
    p.add_argument("--build", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--triples", required=True)
    p.add_argument("--descriptions", default=None)
    p.set_defaults(handler=cmd_pretrain)

    p = sub.add_parser("probe", help="zero-shot cloze probing of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--probes", required=True)
    p.add_argument("--vocab", required=True)
    p.set_defaults(handler=cmd_probe)

    p = sub.add_parser("export-plots", help="rank-frequency scatter data")
    common(p)
    p.add_argument("--build", required=True)
    p.set_defaults(handler=cmd_export_plots)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args, extras = parser.parse_known_args(argv)
        overrides = _parse_overrides(extras)
        cfg = load_run_config(args.config, overrides)
        os.makedirs(args.out, exist_ok=True)
        return args.handler(args, cfg)
    except KelpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
