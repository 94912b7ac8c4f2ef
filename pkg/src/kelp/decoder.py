"""Relational knowledge decoder: reconstruct the counterpart entity token by
token from the injected span's output states.

The span's final-layer states are pooled and projected into the initial
decoder state. Each step multiplies the previous state elementwise with the
pooled relation representation, scales, projects, and squashes with tanh
(teacher forcing: target tokens enter only through the loss). Token losses use
a sampled softmax against the tied token embeddings, with negatives derived
from degree-ranked negative entities (uniform vocabulary fallback on empty
pools).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import Tensor, nn

from .corpus import Mention, Vocabulary
from .encoder import (
    SequenceStates,
    TinyEncoder,
    _normal,
    _ones,
    _zeros,
    layer_norm,
    self_attentive_pool,
)
from .errors import ConfigError, DataError, NumericalError
from .kg import KnowledgeGraph, Triple
from .seeds import stable_rng


class DecoderParams(nn.Module):
    def __init__(
        self,
        d_model: int,
        generator: torch.Generator,
        delta_d: float = 1.0,
        delta_d_trainable: bool = False,
    ):
        super().__init__()
        if delta_d <= 0:
            raise ConfigError(f"delta_d must be positive, got {delta_d}")
        self.w_out = _normal(generator, d_model, d_model)
        self.ln_out_g, self.ln_out_b = _ones(d_model), _zeros(d_model)
        self.w_d = _normal(generator, d_model, d_model)
        self.delta_d = nn.Parameter(
            torch.tensor(delta_d, dtype=torch.float64), requires_grad=delta_d_trainable
        )


@dataclass
class DecodingTarget:
    triple: Triple
    role: str  # role of the injected mention in the triple
    target_tokens: list[int]  # the counterpart entity's name token ids
    negatives: list[int]  # negative entity ids, ground truth excluded

    def __post_init__(self) -> None:
        if not self.target_tokens:
            raise DataError("empty decoding target")

    @property
    def counterpart(self) -> int:
        return self.triple.tail if self.role == "head" else self.triple.head


@dataclass
class DecodeItem:
    """Runtime wiring of one decoding target to its sentence forward pass."""

    target: DecodingTarget
    states: SequenceStates
    mention: Mention
    relation_repr: Tensor  # pooled relation representation from the pseudo build


def make_decoding_target(
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    triple: Triple,
    role: str,
    n_negatives: int,
    seed: int = 0,
) -> DecodingTarget:
    counterpart = triple.tail if role == "head" else triple.head
    counterpart_role = "tail" if role == "head" else "head"
    negatives = kg.sample_negatives(
        triple.relation, counterpart, n_negatives, seed=seed, role=counterpart_role
    )
    tokens = vocab.encode(kg.entity_name(counterpart).split())
    return DecodingTarget(triple=triple, role=role, target_tokens=tokens, negatives=negatives)


def span_output_repr(
    model: TinyEncoder, states: SequenceStates, mention: Mention, params: DecoderParams
) -> Tensor:
    """Pooled, projected representation of the injected span's output states."""
    if mention.end > len(states.tokens):
        raise DataError(f"mention span {mention.span} outside sequence")
    span = states.final[mention.start : mention.end]
    pooled = self_attentive_pool(model, span, "span_output")
    return layer_norm(torch.sigmoid(pooled @ params.w_out), params.ln_out_g, params.ln_out_b)


def decode_step(h_prev: Tensor, h_r: Tensor, params: DecoderParams) -> Tensor:
    """One recurrence step: tanh(delta_d * (h_r o h_prev) @ W_d)."""
    if not (torch.isfinite(h_prev).all() and torch.isfinite(h_r).all()):
        raise NumericalError("non-finite decoder input")
    return torch.tanh(params.delta_d * (h_r * h_prev) @ params.w_d)


def sampled_softmax_loss(
    h_d: Tensor,
    truth: int,
    negatives: list[int],
    model: TinyEncoder,
    pool_size: int | None = None,
) -> Tensor:
    """Negative log of the sampled-softmax ratio for one token.

    Scores are dot products against the tied token embedding rows, shifted by
    the uniform-proposal correction -log Q = log(pool size); the shift is
    identical for every candidate so it cancels in the ratio. With no
    negatives the ratio is 1 and the loss exactly 0.
    """
    if truth in negatives:
        raise DataError(f"truth token {truth} appears among negatives")
    candidates = [truth] + list(negatives)
    logits = model.tok_emb[candidates] @ h_d
    if negatives:
        correction = math.log(pool_size if pool_size is not None else len(negatives))
        logits = logits + correction
    return torch.logsumexp(logits, dim=0) - logits[0]


def _uniform_negative_tokens(
    vocab: Vocabulary, truth: int, n: int, seed
) -> list[int]:
    ids = [i for i in vocab.regular_ids() if i != truth]
    if not ids:
        return []
    rng = stable_rng("uniform_negatives", seed, truth)
    return [ids[rng.randrange(len(ids))] for _ in range(n)]


def decoding_loss(
    model: TinyEncoder,
    params: DecoderParams,
    items: list[DecodeItem],
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    n_negatives: int,
    seed: int = 0,
) -> tuple[Tensor, int]:
    """Mean per-target decoding loss over a batch; (0, 0) for empty batches.

    Each negative entity contributes its name's i-th token at step i (its last
    token when shorter than the target); tokens colliding with the step's
    truth are dropped to keep the exclusion invariant.
    """
    if not items:
        return torch.zeros((), dtype=torch.float64), 0
    total = torch.zeros((), dtype=torch.float64)
    for item in items:
        tgt = item.target
        neg_token_seqs = [vocab.encode(kg.entity_name(e).split()) for e in tgt.negatives]
        h = span_output_repr(model, item.states, item.mention, params)
        target_loss = torch.zeros((), dtype=torch.float64)
        for i, truth in enumerate(tgt.target_tokens):
            h = decode_step(h, item.relation_repr, params)
            if neg_token_seqs:
                negs = [seq[min(i, len(seq) - 1)] for seq in neg_token_seqs]
                negs = [t for t in negs if t != truth]
                pool = len(neg_token_seqs)
            else:
                negs = _uniform_negative_tokens(vocab, truth, n_negatives, (seed, i))
                pool = len(vocab.regular_ids())
            target_loss = target_loss + sampled_softmax_loss(h, truth, negs, model, pool_size=pool)
        total = total + target_loss
    return total / len(items), len(items)
