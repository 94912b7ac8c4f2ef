"""Corpus ingestion: tokenization, vocabulary, entity linking, frequency stats.

Tokenization is lowercased whitespace splitting. Corpus files hold one
sentence per line; ``[[entity|surface text]]`` anchors bypass the dictionary
matcher for their span (mirroring wiki-style anchored text), everything else
is linked by greedy left-to-right longest match against the entity table.
"""

from __future__ import annotations

import math
import re
import statistics
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .errors import DataError
from .kg import KnowledgeGraph

PAD_TOKEN = "[PAD]"
MASK_TOKEN = "[MASK]"
UHN_TOKEN = "[UHN]"
CLS_TOKEN = "[CLS]"
UNK_TOKEN = "[UNK]"
RESERVED_TOKENS = (PAD_TOKEN, MASK_TOKEN, UHN_TOKEN, CLS_TOKEN, UNK_TOKEN)
PAD_ID, MASK_ID, UHN_ID, CLS_ID, UNK_ID = range(len(RESERVED_TOKENS))

_ANCHOR_RE = re.compile(r"\[\[([^\[\]|]+?)(?:\|([^\[\]|]+?))?\]\]")


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class Vocabulary:
    """Token table with fixed reserved ids 0..3 and a dedicated unknown id 4."""

    def __init__(self, tokens: Iterable[str] = ()):
        regular = sorted(set(tokens) - set(RESERVED_TOKENS))
        self._tokens = list(RESERVED_TOKENS) + regular
        self._ids = {t: i for i, t in enumerate(self._tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @property
    def n_reserved(self) -> int:
        return len(RESERVED_TOKENS)

    def regular_ids(self) -> range:
        return range(self.n_reserved, len(self._tokens))

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._tokens):
            raise DataError(f"token id {token_id} out of range")
        return self._tokens[token_id]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for i, tok in enumerate(self._tokens):
                f.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        tokens: list[str] = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) != 2 or int(fields[1]) != len(tokens):
                    raise DataError(f"{path}:{lineno}: malformed vocabulary row")
                tokens.append(fields[0])
        if tokens[: len(RESERVED_TOKENS)] != list(RESERVED_TOKENS):
            raise DataError(f"{path}: reserved token block is corrupt")
        vocab = cls(tokens[len(RESERVED_TOKENS) :])
        if vocab._tokens != tokens:
            raise DataError(f"{path}: vocabulary rows are not in canonical order")
        return vocab


@dataclass(frozen=True)
class Mention:
    entity: int
    start: int
    end: int

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise DataError(f"bad mention span [{self.start}, {self.end})")

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass
class LinkedSentence:
    tokens: list[int]
    mentions: list[Mention]
    sent_id: int = 0
    truncated: bool = False


def _split_anchors(raw: str) -> list[tuple[str | None, tuple[str, str] | None]]:
    """Split a raw line into plain-text and (entity, surface) anchor parts."""
    parts: list[tuple[str | None, tuple[str, str] | None]] = []
    pos = 0
    for m in _ANCHOR_RE.finditer(raw):
        if m.start() > pos:
            parts.append((raw[pos : m.start()], None))
        entity = m.group(1)
        surface = m.group(2) if m.group(2) is not None else entity
        parts.append((None, (entity, surface)))
        pos = m.end()
    if pos < len(raw):
        parts.append((raw[pos:], None))
    return parts


def link_entities(
    raw_sentence: str,
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    max_len: int | None = None,
    sent_id: int = 0,
) -> LinkedSentence:
    """Link KG entities in one sentence.

    Anchored spans are linked directly (unknown anchor entities degrade to
    plain text); the remaining positions go through greedy left-to-right
    longest match against the entity name table. Mentions never overlap.
    """
    words: list[str] = []
    locked: list[bool] = []
    mentions: list[Mention] = []
    for literal, anchor in _split_anchors(raw_sentence):
        if literal is not None:
            toks = tokenize(literal)
            words.extend(toks)
            locked.extend([False] * len(toks))
        else:
            entity_name, surface = anchor  # type: ignore[misc]
            toks = tokenize(surface)
            if not toks:
                continue
            start = len(words)
            words.extend(toks)
            eid = kg.entity_id_or_none(entity_name)
            if eid is not None:
                mentions.append(Mention(eid, start, start + len(toks)))
                locked.extend([True] * len(toks))
            else:
                locked.extend([False] * len(toks))
    if not words:
        raise DataError("empty sentence")

    index = kg.name_index()
    i = 0
    while i < len(words):
        if locked[i]:
            i += 1
            continue
        matched = False
        for name_toks, eid in index.get(words[i], ()):
            j = i + len(name_toks)
            if j <= len(words) and not any(locked[i:j]) and words[i:j] == list(name_toks):
                mentions.append(Mention(eid, i, j))
                for p in range(i, j):
                    locked[p] = True
                i = j
                matched = True
                break
        if not matched:
            i += 1

    truncated = False
    if max_len is not None and len(words) > max_len:
        words = words[:max_len]
        mentions = [m for m in mentions if m.end <= max_len]
        truncated = True
    mentions.sort(key=lambda m: m.start)
    return LinkedSentence(vocab.encode(words), mentions, sent_id=sent_id, truncated=truncated)


@dataclass
class FrequencyTable:
    """Mention counts per entity; absent entities read as frequency 0."""

    counts: dict[int, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return sum(self.counts.values())

    def freq(self, entity: int) -> float:
        return self.counts.get(entity, 0)

    def median(self) -> float:
        if not self.counts:
            raise DataError("empty frequency table")
        return statistics.median(self.counts.values())

    def __add__(self, other: "FrequencyTable") -> "FrequencyTable":
        merged = dict(self.counts)
        for e, c in other.counts.items():
            merged[e] = merged.get(e, 0) + c
        return FrequencyTable(merged)

    def save(self, path: str, kg: KnowledgeGraph) -> None:
        rows = sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))
        with open(path, "w", encoding="utf-8") as f:
            for eid, count in rows:
                f.write(f"{kg.entity_name(eid)}\t{count}\n")

    @classmethod
    def load(cls, path: str, kg: KnowledgeGraph) -> "FrequencyTable":
        counts: dict[int, float] = {}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                fields = line.split("\t")
                if len(fields) != 2:
                    raise DataError(f"{path}:{lineno}: malformed frequency row")
                value = float(fields[1])
                counts[kg.entity_id(fields[0])] = int(value) if value.is_integer() else value
        return cls(counts)


def count_frequencies(corpus: Iterable[LinkedSentence]) -> FrequencyTable:
    """Count each mention occurrence once over the whole corpus."""
    counts: Counter[int] = Counter()
    n_sentences = 0
    for sent in corpus:
        n_sentences += 1
        for m in sent.mentions:
            counts[m.entity] += 1
    if n_sentences == 0:
        raise DataError("empty corpus")
    return FrequencyTable(dict(counts))


@dataclass(frozen=True)
class PowerLawFit:
    c: float
    alpha: float
    r_squared: float


def fit_power_law(table: FrequencyTable) -> PowerLawFit:
    """Least-squares fit of log freq = log C - alpha * log rank.

    Entities are ranked by descending frequency, ties broken by entity id.
    """
    items = sorted(table.counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if len(items) < 2 or len({v for _, v in items}) < 2:
        raise DataError("degenerate frequency table")
    x = np.log(np.arange(1, len(items) + 1, dtype=np.float64))
    y = np.log(np.array([v for _, v in items], dtype=np.float64))
    xc = x - x.mean()
    yc = y - y.mean()
    slope = float(xc @ yc) / float(xc @ xc)
    intercept = float(y.mean()) - slope * float(x.mean())
    residuals = y - (intercept + slope * x)
    ss_res = float(residuals @ residuals)
    ss_tot = float(yc @ yc)
    return PowerLawFit(c=math.exp(intercept), alpha=-slope, r_squared=1.0 - ss_res / ss_tot)


def read_corpus_lines(path: str) -> list[str]:
    with open(path, encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f]
    return [line for line in lines if line.strip()]


def corpus_surface_tokens(lines: Iterable[str]) -> Iterator[str]:
    """All surface tokens of anchored corpus lines (anchors resolved)."""
    for line in lines:
        for literal, anchor in _split_anchors(line):
            text = literal if literal is not None else anchor[1]  # type: ignore[index]
            yield from tokenize(text)


def kg_surface_tokens(kg: KnowledgeGraph) -> Iterator[str]:
    """Entity names, relation names, and description tokens as vocab input."""
    for name in kg.entity_names:
        yield from name.split()
    for name in kg.relation_names:
        yield from name.split()
    for desc in kg.descriptions.values():
        yield from desc


def build_vocabulary(corpus_lines: Iterable[str], kg: KnowledgeGraph) -> Vocabulary:
    tokens = list(corpus_surface_tokens(corpus_lines))
    tokens.extend(kg_surface_tokens(kg))
    return Vocabulary(tokens)


def load_corpus(
    path: str, kg: KnowledgeGraph, vocab: Vocabulary, max_len: int | None = None
) -> list[LinkedSentence]:
    lines = read_corpus_lines(path)
    if not lines:
        raise DataError("empty corpus")
    return [
        link_entities(line, kg, vocab, max_len=max_len, sent_id=i) for i, line in enumerate(lines)
    ]
