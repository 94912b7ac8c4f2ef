"""Knowledge graph store: loading, adjacency, multi-hop counts, negative sampling.

Entities and relations get dense integer ids in first-seen order. The graph is
immutable after loading; every query method is safe for concurrent readers.
``query_count`` tracks how often the graph was consulted, which the inference
path is required to leave untouched.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import ConfigError, DataError


def normalize_name(name: str) -> str:
    """Canonical surface form: lowercased, single-space separated tokens."""
    return " ".join(name.lower().split())


@dataclass(frozen=True)
class Triple:
    head: int
    relation: int
    tail: int


class KnowledgeGraph:
    def __init__(self) -> None:
        self.entity_names: list[str] = []
        self.relation_names: list[str] = []
        self._entity_ids: dict[str, int] = {}
        self._relation_ids: dict[str, int] = {}
        self.triples: list[Triple] = []
        self._triple_set: set[Triple] = set()
        self.out_adj: list[list[Triple]] = []
        self.in_adj: list[list[Triple]] = []
        self.descriptions: dict[int, tuple[str, ...]] = {}
        self.query_count = 0
        self._undirected: list[set[int]] | None = None
        self._participants: dict[tuple[int, str], list[int]] | None = None
        self._name_index: dict[str, list[tuple[tuple[str, ...], int]]] | None = None

    # -- construction ------------------------------------------------------

    def _add_entity(self, name: str) -> int:
        key = normalize_name(name)
        if not key:
            raise DataError("empty entity name")
        eid = self._entity_ids.get(key)
        if eid is None:
            eid = len(self.entity_names)
            self._entity_ids[key] = eid
            self.entity_names.append(key)
            self.out_adj.append([])
            self.in_adj.append([])
        return eid

    def _add_relation(self, name: str) -> int:
        key = normalize_name(name)
        if not key:
            raise DataError("empty relation name")
        rid = self._relation_ids.get(key)
        if rid is None:
            rid = len(self.relation_names)
            self._relation_ids[key] = rid
            self.relation_names.append(key)
        return rid

    def _add_triple(self, head: str, relation: str, tail: str) -> None:
        t = Triple(self._add_entity(head), self._add_relation(relation), self._add_entity(tail))
        if t in self._triple_set:
            return
        self._triple_set.add(t)
        self.triples.append(t)
        self.out_adj[t.head].append(t)
        self.in_adj[t.tail].append(t)

    @classmethod
    def from_triples(
        cls,
        triples: Iterable[tuple[str, str, str]],
        descriptions: dict[str, str] | None = None,
    ) -> "KnowledgeGraph":
        kg = cls()
        for h, r, t in triples:
            kg._add_triple(h, r, t)
        if not kg.triples:
            raise DataError("empty knowledge graph")
        for name, text in (descriptions or {}).items():
            kg.descriptions[kg._add_entity(name)] = tuple(text.lower().split())
        return kg

    # -- tables ------------------------------------------------------------

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def entity_id(self, name: str) -> int:
        eid = self._entity_ids.get(normalize_name(name))
        if eid is None:
            raise DataError(f"unknown entity {name!r}")
        return eid

    def entity_id_or_none(self, name: str) -> Optional[int]:
        return self._entity_ids.get(normalize_name(name))

    def entity_name(self, eid: int) -> str:
        self._check_entity(eid)
        return self.entity_names[eid]

    def relation_id(self, name: str) -> int:
        rid = self._relation_ids.get(normalize_name(name))
        if rid is None:
            raise DataError(f"unknown relation {name!r}")
        return rid

    def relation_name(self, rid: int) -> str:
        if not 0 <= rid < len(self.relation_names):
            raise DataError(f"unknown relation id {rid}")
        return self.relation_names[rid]

    def _check_entity(self, eid: int) -> None:
        if not 0 <= eid < self.n_entities:
            raise DataError(f"unknown entity id {eid}")

    # -- queries -----------------------------------------------------------

    def _undirected_adj(self) -> list[set[int]]:
        if self._undirected is None:
            adj: list[set[int]] = [set() for _ in range(self.n_entities)]
            for t in self.triples:
                adj[t.head].add(t.tail)
                adj[t.tail].add(t.head)
            self._undirected = adj
        return self._undirected

    def multi_hop_count(self, e: int, r_hop: int) -> int:
        """Number of distinct entities e' != e with Hop(e', e) < r_hop.

        Hop is the shortest-path length over the undirected view of the
        triple set; the bound is strict.
        """
        self._check_entity(e)
        if r_hop < 1:
            raise ConfigError(f"r_hop must be >= 1, got {r_hop}")
        self.query_count += 1
        adj = self._undirected_adj()
        seen = {e}
        frontier = deque([e])
        count = 0
        for _ in range(r_hop - 1):
            next_frontier: deque[int] = deque()
            while frontier:
                u = frontier.popleft()
                for v in adj[u]:
                    if v not in seen:
                        seen.add(v)
                        next_frontier.append(v)
                        count += 1
            if not next_frontier:
                break
            frontier = next_frontier
        return count

    def knowledge_connectivity(self, e: int, r_hop: int, r_min: int, r_max: int) -> int:
        """Multi-hop neighbor count clamped into [r_min, r_max]."""
        if r_min > r_max:
            raise ConfigError(f"r_min {r_min} > r_max {r_max}")
        return min(max(self.multi_hop_count(e, r_hop), r_min), r_max)

    def degree(self, e: int) -> int:
        """Number of incident triples (a self-loop counts twice)."""
        self._check_entity(e)
        return len(self.out_adj[e]) + len(self.in_adj[e])

    def _participant_lists(self) -> dict[tuple[int, str], list[int]]:
        if self._participants is None:
            lists: dict[tuple[int, str], list[int]] = {}
            seen: dict[tuple[int, str], set[int]] = {}
            for t in self.triples:
                for role, eid in (("head", t.head), ("tail", t.tail)):
                    key = (t.relation, role)
                    bucket = seen.setdefault(key, set())
                    if eid not in bucket:
                        bucket.add(eid)
                        lists.setdefault(key, []).append(eid)
            self._participants = lists
        return self._participants

    def relation_participants(self, relation: int, role: str = "tail") -> list[int]:
        """Entities appearing on the given side of the relation, first-seen order."""
        if role not in ("head", "tail"):
            raise ConfigError(f"role must be head or tail, got {role!r}")
        if not 0 <= relation < self.n_relations:
            raise DataError(f"unknown relation id {relation}")
        self.query_count += 1
        return list(self._participant_lists().get((relation, role), []))

    def sample_negatives(
        self, relation: int, ground_truth: int, n: int, seed: int = 0, role: str = "tail"
    ) -> list[int]:
        """Top-n negative entities for a relation, ranked by undirected degree.

        Candidates are the relation's participants on the requested side minus
        the ground truth. Higher degree ranks first (harder negatives), ties
        break by entity id. Fully deterministic; ``seed`` is accepted for API
        stability but unused. Empty pools return [] and the caller falls back
        to uniform vocabulary sampling.
        """
        if n < 1:
            raise ConfigError(f"n must be >= 1, got {n}")
        candidates = [e for e in self.relation_participants(relation, role) if e != ground_truth]
        candidates.sort(key=lambda e: (-self.degree(e), e))
        return candidates[:n]

    def entity_description(self, e: int) -> Optional[tuple[str, ...]]:
        """Stored description token sequence, or None when absent."""
        self._check_entity(e)
        self.query_count += 1
        return self.descriptions.get(e)

    def triples_of(self, e: int) -> list[tuple[Triple, str]]:
        """All triples the entity participates in, with its role in each.

        Out-edges (role head) come first; a self-loop appears once with role
        head. Order is deterministic (adjacency insertion order).
        """
        self._check_entity(e)
        self.query_count += 1
        records = [(t, "head") for t in self.out_adj[e]]
        records.extend((t, "tail") for t in self.in_adj[e] if t.head != e)
        return records

    def name_index(self) -> dict[str, list[tuple[tuple[str, ...], int]]]:
        """First token -> [(name tokens, entity id)], longest names first."""
        if self._name_index is None:
            index: dict[str, list[tuple[tuple[str, ...], int]]] = {}
            for eid, name in enumerate(self.entity_names):
                toks = tuple(name.split())
                index.setdefault(toks[0], []).append((toks, eid))
            for bucket in index.values():
                bucket.sort(key=lambda item: (-len(item[0]), item[1]))
            self._name_index = index
        return self._name_index


def load_kg(triples_path: str, descriptions_path: str | None = None) -> KnowledgeGraph:
    """Load a graph from TSV files.

    Triples file: one ``head TAB relation TAB tail`` per line. Descriptions
    file: ``entity TAB space-separated tokens``; entities appearing only there
    are still registered.
    """
    kg = KnowledgeGraph()
    with open(triples_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataError(
                    f"{triples_path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            kg._add_triple(*fields)
    if not kg.triples:
        raise DataError("empty knowledge graph")
    if descriptions_path is not None:
        with open(descriptions_path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                fields = line.split("\t")
                if len(fields) != 2:
                    raise DataError(
                        f"{descriptions_path}:{lineno}: expected 2 tab-separated fields,"
                        f" got {len(fields)}"
                    )
                name, text = fields
                kg.descriptions[kg._add_entity(name)] = tuple(text.lower().split())
    return kg


def export_tables(kg: KnowledgeGraph, entities_path: str, relations_path: str) -> None:
    """Write ``name TAB id`` TSVs for the entity and relation tables."""
    with open(entities_path, "w", encoding="utf-8") as f:
        for eid, name in enumerate(kg.entity_names):
            f.write(f"{name}\t{eid}\n")
    with open(relations_path, "w", encoding="utf-8") as f:
        for rid, name in enumerate(kg.relation_names):
            f.write(f"{name}\t{rid}\n")
