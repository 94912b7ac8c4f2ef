"""Pseudo token representations for long-tail mentions, built from KG triples.

The counterpart entity and the relation predicate are encoded standalone by
the shared encoder, pooled, projected (sigmoid + layer norm), and composed by
the additive translation rule: for an injected head the counterpart tail is
translated back (tail - relation), for an injected tail forward (head +
relation). The translated vector is concatenated with the pooled description
representation (zero vector when no description exists) and projected through
a shared tanh head. The result replaces the mention's token embeddings at
every span position.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .corpus import LinkedSentence, Mention, Vocabulary
from .encoder import TinyEncoder, _normal, _ones, _zeros, encode, layer_norm, self_attentive_pool
from .errors import ConfigError, DataError
from .kg import KnowledgeGraph, Triple
from .seeds import stable_rng


class InjectionParams(nn.Module):
    """Projection matrices and layer norms of the pseudo-token builder.

    ``build_count`` tracks how many pseudo vectors were constructed; the
    inference path must leave it at zero.
    """

    def __init__(self, d_model: int, generator: torch.Generator):
        super().__init__()
        self.w_et = _normal(generator, d_model, d_model)
        self.w_r = _normal(generator, d_model, d_model)
        self.w_eh = _normal(generator, 2 * d_model, d_model)
        self.ln_et_g, self.ln_et_b = _ones(d_model), _zeros(d_model)
        self.ln_r_g, self.ln_r_b = _ones(d_model), _zeros(d_model)
        self.build_count = 0


@dataclass
class PseudoEmbedding:
    vector: Tensor
    triple: Triple
    role: str  # "head" or "tail": position of the injected entity in the triple
    component: Tensor  # projected counterpart-entity representation
    relation_repr: Tensor  # projected relation representation (Eq. 8 analogue)
    translated: Tensor  # component -/+ relation_repr before the tanh head
    mention: Mention | None = None


def component_repr(
    model: TinyEncoder, params: InjectionParams, tokens: list[int], branch: str
) -> Tensor:
    """Encode a name standalone, pool it, project, sigmoid, layer norm."""
    if not tokens:
        raise DataError("empty token sequence for component representation")
    if branch == "entity":
        w, g, b = params.w_et, params.ln_et_g, params.ln_et_b
    elif branch == "relation":
        w, g, b = params.w_r, params.ln_r_g, params.ln_r_b
    else:
        raise ConfigError(f"branch must be entity or relation, got {branch!r}")
    states = encode(model, tokens)
    pooled = self_attentive_pool(model, states.final, branch)
    return layer_norm(torch.sigmoid(pooled @ w), g, b)


def _description_repr(
    model: TinyEncoder,
    params: InjectionParams,
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    entity: int,
) -> Tensor:
    desc = kg.entity_description(entity)
    if desc is None:
        return torch.zeros(model.config.d_model, dtype=model.tok_emb.dtype)
    states = encode(model, vocab.encode(desc))
    return self_attentive_pool(model, states.final, "description")


def _build(
    model: TinyEncoder,
    params: InjectionParams,
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    triple: Triple,
    role: str,
) -> PseudoEmbedding:
    if triple not in kg._triple_set:
        raise DataError(f"triple {triple} not present in the knowledge graph")
    relation_tokens = vocab.encode(kg.relation_name(triple.relation).split())
    h_r = component_repr(model, params, relation_tokens, "relation")
    if role == "head":
        counterpart, injected = triple.tail, triple.head
    else:
        counterpart, injected = triple.head, triple.tail
    counterpart_tokens = vocab.encode(kg.entity_name(counterpart).split())
    component = component_repr(model, params, counterpart_tokens, "entity")
    translated = component - h_r if role == "head" else component + h_r
    desc = _description_repr(model, params, kg, vocab, injected)
    vector = torch.tanh(torch.cat([translated, desc]) @ params.w_eh)
    params.build_count += 1
    return PseudoEmbedding(
        vector=vector,
        triple=triple,
        role=role,
        component=component,
        relation_repr=h_r,
        translated=translated,
    )


def pseudo_head(
    model: TinyEncoder,
    params: InjectionParams,
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    triple: Triple,
) -> PseudoEmbedding:
    """Pseudo vector for a mention that is the triple's head entity."""
    return _build(model, params, kg, vocab, triple, "head")


def pseudo_tail(
    model: TinyEncoder,
    params: InjectionParams,
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    triple: Triple,
) -> PseudoEmbedding:
    """Pseudo vector for a mention that is the triple's tail entity."""
    return _build(model, params, kg, vocab, triple, "tail")


def choose_triple(kg: KnowledgeGraph, entity: int, seed) -> tuple[Triple, str] | None:
    """Uniform deterministic pick among the entity's triples, or None.

    The seed should fold in the sentence id so the same mention site always
    resolves to the same triple within a run.
    """
    records = kg.triples_of(entity)
    if not records:
        return None
    rng = stable_rng("choose_triple", seed, entity)
    return records[rng.randrange(len(records))]


def inject(
    sentence: LinkedSentence,
    selected: list[Mention],
    pseudos: list[PseudoEmbedding],
) -> dict[int, Tensor]:
    """Build the position -> vector override map for ``encode``.

    Every position inside a selected mention's span receives that mention's
    pseudo vector (one vector broadcast across multi-token spans).
    """
    if len(selected) != len(pseudos):
        raise DataError("selected mentions and pseudo embeddings differ in length")
    override: dict[int, Tensor] = {}
    for mention, pseudo in zip(selected, pseudos):
        if mention.end > len(sentence.tokens):
            raise DataError(f"mention span {mention.span} outside sentence")
        for pos in range(mention.start, mention.end):
            if pos in override:
                raise DataError(f"overlapping override at position {pos}")
            override[pos] = pseudo.vector
    return override
