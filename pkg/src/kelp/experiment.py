"""Matched-run policy comparison on a synthetic world.

Trains one model per (selection policy, seed) pair with identical data,
architecture, step budget, and batch schedule, then probes every run on the
held-out facts. The pure-MLM baseline uses the ``none`` policy with the
decoding objective switched off entirely (lambda1 = 1).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

from .corpus import FrequencyTable, Vocabulary, build_vocabulary, link_entities, count_frequencies
from .detector import DetectionConfig
from .encoder import EncoderConfig
from .kg import KnowledgeGraph
from .model import init_model, load_checkpoint
from .probe import evaluate, parse_query
from .synthetic import World, WorldSpec, generate_world
from .training import TrainConfig, train

POLICIES = ("long_tail", "high_frequency", "none")


@dataclass
class ExperimentConfig:
    world: WorldSpec = field(default_factory=WorldSpec)
    encoder: EncoderConfig = field(
        default_factory=lambda: EncoderConfig(
            d_model=32, n_layers=2, n_heads=4, d_ff=64, max_len=16, vocab_size=1
        )
    )
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            steps=600, batch_size=8, learning_rate=0.5, mlm_rate=0.25, n_negatives=20
        )
    )
    r_freq: float = 20.0  # splits the bimodal synthetic frequency profile
    seeds: tuple[int, ...] = (0, 1, 2)
    policies: tuple[str, ...] = POLICIES


@dataclass
class RunOutcome:
    policy: str
    seed: int
    macro_p_at_1: float
    per_relation: dict[str, float]
    metrics_path: str
    checkpoint: str


@dataclass
class PreparedWorld:
    world: World
    kg: KnowledgeGraph
    vocab: Vocabulary
    corpus: list
    freq: FrequencyTable
    queries: list


def prepare_world(cfg: ExperimentConfig) -> PreparedWorld:
    world = generate_world(cfg.world)
    kg = KnowledgeGraph.from_triples(world.triples, descriptions=world.descriptions)
    vocab = build_vocabulary(world.corpus_lines, kg)
    corpus = [
        link_entities(line, kg, vocab, max_len=cfg.encoder.max_len, sent_id=i)
        for i, line in enumerate(world.corpus_lines)
    ]
    freq = count_frequencies(corpus)
    queries = [
        parse_query(p["template"], p["answer"], p["relation"], vocab) for p in world.probes
    ]
    return PreparedWorld(world=world, kg=kg, vocab=vocab, corpus=corpus, freq=freq, queries=queries)


def run_policy(
    prepared: PreparedWorld, cfg: ExperimentConfig, policy: str, seed: int, out_dir: str
) -> RunOutcome:
    encoder_cfg = replace(cfg.encoder, vocab_size=len(prepared.vocab))
    bundle = init_model(encoder_cfg, seed=seed)
    lambda1 = 1.0 if policy == "none" else cfg.train.lambda1
    train_cfg = replace(cfg.train, seed=seed, lambda1=lambda1)
    det_cfg = DetectionConfig(r_freq=cfg.r_freq, policy=policy)
    result = train(
        prepared.corpus,
        prepared.kg,
        prepared.vocab,
        prepared.freq,
        bundle,
        train_cfg,
        det_cfg,
        out_dir,
    )
    probe = evaluate(bundle.encoder, prepared.queries)
    return RunOutcome(
        policy=policy,
        seed=seed,
        macro_p_at_1=probe.macro_p_at_1,
        per_relation=probe.per_relation,
        metrics_path=result.metrics_path,
        checkpoint=result.final_checkpoint,
    )


def run_experiment(cfg: ExperimentConfig, out_dir: str) -> dict[tuple[str, int], RunOutcome]:
    prepared = prepare_world(cfg)
    outcomes: dict[tuple[str, int], RunOutcome] = {}
    for seed in cfg.seeds:
        for policy in cfg.policies:
            run_dir = os.path.join(out_dir, f"{policy}_seed{seed}")
            outcomes[(policy, seed)] = run_policy(prepared, cfg, policy, seed, run_dir)
    return outcomes


def mean_macro(outcomes: dict[tuple[str, int], RunOutcome], policy: str) -> float:
    values = [o.macro_p_at_1 for (p, _), o in outcomes.items() if p == policy]
    return sum(values) / len(values)
