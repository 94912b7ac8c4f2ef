"""Deterministic synthetic world generator for probing experiments.

Builds a functional knowledge graph (one tail per head-relation pair), an
anchored corpus that verbalizes a per-relation train split of the triples,
filler-only context sentences for every entity, generic entity descriptions,
and cloze probes over the held-out split. Held-out facts never appear in the
corpus or in descriptions; they are reachable only through the graph.

Entity mention frequencies are skewed on purpose: a small popular set has its
fact sentences repeated, everything else stays long-tail.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .errors import DataError

RELATION_VERBS = (
    "borders",
    "guards",
    "follows",
    "contains",
    "teaches",
    "supplies",
    "precedes",
    "orbits",
)
FILLERS = ("today", "again", "still", "quietly", "nearby", "then", "softly", "once")
DESC_ADJECTIVES = ("small", "grey", "brisk", "pale", "stern", "worn")
DESC_NOUNS = ("outpost", "guild", "ridge", "harbor", "archive", "mill")


@dataclass
class WorldSpec:
    n_entities: int = 200
    n_relations: int = 8
    n_triples: int = 600
    holdout_fraction: float = 0.2
    n_popular: int = 15
    base_copies: int = 3  # sentence copies per ordinary train fact
    popular_copies: int = 8  # copies when either endpoint is popular
    contexts_per_entity: int = 3
    seed: int = 0

    def validate(self) -> None:
        if self.n_relations > len(RELATION_VERBS):
            raise DataError(f"at most {len(RELATION_VERBS)} relations supported")
        if self.n_entities < 2 or self.n_triples < self.n_entities:
            raise DataError("need at least one triple per entity")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise DataError("holdout_fraction must be in (0, 1)")


@dataclass
class World:
    spec: WorldSpec
    triples: list[tuple[str, str, str]]
    train_triples: list[tuple[str, str, str]]
    holdout_triples: list[tuple[str, str, str]]
    corpus_lines: list[str]
    probes: list[dict]
    descriptions: dict[str, str]
    popular: list[str] = field(default_factory=list)


def _fact_line(h: str, verb: str, t: str, filler: str) -> str:
    return f"[[{h}]] {verb} [[{t}]] {filler}"


def _probe_record(h: str, verb: str, t: str) -> dict:
    return {"template": f"{h} {verb} [MASK] today", "answer": t, "relation": verb}


def generate_world(spec: WorldSpec) -> World:
    spec.validate()
    rng = random.Random(spec.seed)
    entities = [f"ent{i:03d}" for i in range(spec.n_entities)]
    relations = list(RELATION_VERBS[: spec.n_relations])

    # Functional triples: at most one tail per (head, relation). The first
    # pass guarantees every entity participates at least once as a head.
    triples: list[tuple[str, str, str]] = []
    used_pairs: set[tuple[str, str]] = set()
    for i, h in enumerate(entities):
        r = relations[i % len(relations)]
        t = entities[rng.randrange(spec.n_entities)]
        while t == h:
            t = entities[rng.randrange(spec.n_entities)]
        triples.append((h, r, t))
        used_pairs.add((h, r))
    while len(triples) < spec.n_triples:
        h = entities[rng.randrange(spec.n_entities)]
        r = relations[rng.randrange(len(relations))]
        if (h, r) in used_pairs:
            continue
        t = entities[rng.randrange(spec.n_entities)]
        while t == h:
            t = entities[rng.randrange(spec.n_entities)]
        triples.append((h, r, t))
        used_pairs.add((h, r))

    by_relation: dict[str, list[tuple[str, str, str]]] = {r: [] for r in relations}
    for triple in triples:
        by_relation[triple[1]].append(triple)
    holdout: list[tuple[str, str, str]] = []
    train: list[tuple[str, str, str]] = []
    for r in relations:
        group = by_relation[r]
        k = max(1, round(spec.holdout_fraction * len(group)))
        held = set(rng.sample(range(len(group)), k))
        for i, triple in enumerate(group):
            (holdout if i in held else train).append(triple)

    popular = sorted(rng.sample(entities, spec.n_popular))
    popular_set = set(popular)

    def filler() -> str:
        return FILLERS[rng.randrange(len(FILLERS))]

    corpus: list[str] = []
    for h, r, t in train:
        copies = (
            spec.popular_copies if (h in popular_set or t in popular_set) else spec.base_copies
        )
        for _ in range(copies):
            corpus.append(_fact_line(h, r, t, filler()))
    for e in entities:
        for _ in range(spec.contexts_per_entity):
            corpus.append(f"{e} waits {filler()} {filler()}")
    rng.shuffle(corpus)

    descriptions = {
        e: f"{e} is a {DESC_ADJECTIVES[rng.randrange(len(DESC_ADJECTIVES))]} "
        f"{DESC_NOUNS[rng.randrange(len(DESC_NOUNS))]}"
        for e in entities
    }

    probes = [_probe_record(h, r, t) for h, r, t in holdout]

    for h, r, t in holdout:
        fact = f"{h} {r} {t}"
        for line in corpus:
            if fact in line.replace("[[", "").replace("]]", ""):
                raise DataError(f"held-out fact leaked into the corpus: {fact}")

    return World(
        spec=spec,
        triples=triples,
        train_triples=train,
        holdout_triples=holdout,
        corpus_lines=corpus,
        probes=probes,
        descriptions=descriptions,
        popular=popular,
    )


def write_world(world: World, out_dir: str) -> dict[str, str]:
    """Write corpus/triples/descriptions/probes files; returns their paths."""
    import json
    import os

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "corpus": os.path.join(out_dir, "corpus.txt"),
        "triples": os.path.join(out_dir, "triples.tsv"),
        "descriptions": os.path.join(out_dir, "descriptions.tsv"),
        "probes": os.path.join(out_dir, "probes.jsonl"),
    }
    with open(paths["corpus"], "w", encoding="utf-8") as f:
        for line in world.corpus_lines:
            f.write(line + "\n")
    with open(paths["triples"], "w", encoding="utf-8") as f:
        for h, r, t in world.triples:
            f.write(f"{h}\t{r}\t{t}\n")
    with open(paths["descriptions"], "w", encoding="utf-8") as f:
        for e, text in world.descriptions.items():
            f.write(f"{e}\t{text}\n")
    with open(paths["probes"], "w", encoding="utf-8") as f:
        for record in world.probes:
            f.write(json.dumps(record) + "\n")
    return paths
