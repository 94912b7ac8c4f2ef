"""Zero-shot cloze probing with macro-averaged precision at rank 1.

Probing is pure inference: the plain encoder path only, no knowledge graph,
no embedding overrides, no pseudo token construction. Vocabulary tokens are
ranked by the tied-embedding logits at the single [MASK] position; ties break
by ascending token id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .corpus import MASK_ID, MASK_TOKEN, UNK_ID, Vocabulary, tokenize
from .encoder import TinyEncoder, encode
from .errors import DataError


@dataclass(frozen=True)
class ClozeQuery:
    tokens: tuple[int, ...]  # template token ids with exactly one [MASK]
    answer: int
    relation: str

    def __post_init__(self) -> None:
        if self.tokens.count(MASK_ID) != 1:
            raise DataError(
                f"cloze template must contain exactly one [MASK], got {self.tokens.count(MASK_ID)}"
            )

    @property
    def mask_position(self) -> int:
        return self.tokens.index(MASK_ID)


@dataclass
class ProbeResult:
    per_relation: dict[str, float]
    macro_p_at_1: float
    ranks: list[int] = field(default_factory=list)  # per query, 1-based

    def to_json(self) -> dict:
        return {"per_relation": self.per_relation, "macro_p_at_1": self.macro_p_at_1}


def parse_query(template: str, answer: str, relation: str, vocab: Vocabulary) -> ClozeQuery:
    ids = []
    for tok in tokenize(template):
        if tok.upper() == MASK_TOKEN:
            ids.append(MASK_ID)
        else:
            ids.append(vocab.id(tok))
    answer_id = vocab.id(answer.lower())
    if answer_id == UNK_ID and answer.lower() != vocab.token(UNK_ID).lower():
        raise DataError(f"probe answer {answer!r} not in vocabulary")
    return ClozeQuery(tokens=tuple(ids), answer=answer_id, relation=relation)


def load_probes(path: str, vocab: Vocabulary) -> list[ClozeQuery]:
    """Read JSON-lines records {template, answer, relation}."""
    queries: list[ClozeQuery] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                queries.append(
                    parse_query(record["template"], record["answer"], record["relation"], vocab)
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataError(f"{path}:{lineno}: malformed probe record: {exc}") from exc
    if not queries:
        raise DataError(f"{path}: empty probe file")
    return queries


@torch.no_grad()
def _mask_logits(model: TinyEncoder, query: ClozeQuery) -> np.ndarray:
    states = encode(model, list(query.tokens))
    return model.output_logits(states.final[query.mask_position]).numpy()


def cloze_predict(model: TinyEncoder, query: ClozeQuery) -> list[int]:
    """Full vocabulary ranking at the [MASK] position, best first."""
    logits = _mask_logits(model, query)
    order = np.lexsort((np.arange(len(logits)), -logits))
    return [int(t) for t in order]


def answer_rank(model: TinyEncoder, query: ClozeQuery) -> int:
    """1-based rank of the answer token under the tie-broken ordering."""
    logits = _mask_logits(model, query)
    a = query.answer
    better = int(np.sum(logits > logits[a]))
    tied_earlier = int(np.sum((logits == logits[a]) & (np.arange(len(logits)) < a)))
    return 1 + better + tied_earlier


def evaluate(model: TinyEncoder, queries: list[ClozeQuery]) -> ProbeResult:
    """Per-relation P@1 and the unweighted macro average."""
    if not queries:
        raise DataError("empty query set")
    hits: dict[str, int] = {}
    totals: dict[str, int] = {}
    ranks: list[int] = []
    for q in queries:
        rank = answer_rank(model, q)
        ranks.append(rank)
        totals[q.relation] = totals.get(q.relation, 0) + 1
        hits[q.relation] = hits.get(q.relation, 0) + (1 if rank == 1 else 0)
    per_relation = {rel: hits[rel] / totals[rel] for rel in sorted(totals)}
    macro = sum(per_relation.values()) / len(per_relation)
    return ProbeResult(per_relation=per_relation, macro_p_at_1=macro, ranks=ranks)


def write_result(result: ProbeResult, json_path: str, ranks_path: str | None = None) -> None:
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(result.to_json(), f, indent=2, sort_keys=True)
        f.write("\n")
    if ranks_path is not None:
        with open(ranks_path, "w", encoding="utf-8") as f:
            for i, rank in enumerate(result.ranks):
                f.write(f"{i}\t{rank}\n")
