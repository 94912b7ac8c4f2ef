"""Tiny pre-norm transformer encoder, float64 end to end.

Architecture: learned token + absolute position embeddings, pre-norm blocks
(multi-head self-attention, erf GELU feed-forward), a final layer norm, and
one learned scoring vector per pooled role for self-attentive span pooling.
The output projection is tied to the token embedding matrix (same tensor).

``encode`` accepts a position -> vector override map: overridden positions use
the provided vector in place of the token embedding (the injection hook); the
position embedding is still added.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import torch
from torch import Tensor, nn

from .corpus import PAD_ID
from .errors import ConfigError, DataError, NumericalError

DTYPE = torch.float64
LN_EPS = 1e-12
INIT_STD = 0.02

POOL_ROLES = ("entity", "relation", "description", "span_output")


@dataclass
class EncoderConfig:
    d_model: int = 48
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 96
    max_len: int = 48
    vocab_size: int = 64
    dropout: float = 0.0

    def validate(self) -> None:
        for name in ("d_model", "n_layers", "n_heads", "d_ff", "max_len", "vocab_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"encoder.{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")


def _normal(generator: torch.Generator, *shape: int) -> nn.Parameter:
    return nn.Parameter(torch.randn(*shape, generator=generator, dtype=DTYPE) * INIT_STD)


def _ones(n: int) -> nn.Parameter:
    return nn.Parameter(torch.ones(n, dtype=DTYPE))


def _zeros(n: int) -> nn.Parameter:
    return nn.Parameter(torch.zeros(n, dtype=DTYPE))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return gamma * (x - mu) / torch.sqrt(var + eps) + beta


def gelu(x: Tensor) -> Tensor:
    return 0.5 * x * (1.0 + torch.erf(x / math.sqrt(2.0)))


class TransformerLayer(nn.Module):
    def __init__(self, config: EncoderConfig, generator: torch.Generator):
        super().__init__()
        d, f = config.d_model, config.d_ff
        self.n_heads = config.n_heads
        self.dropout = config.dropout
        self.ln1_g, self.ln1_b = _ones(d), _zeros(d)
        self.wq, self.bq = _normal(generator, d, d), _zeros(d)
        self.wk, self.bk = _normal(generator, d, d), _zeros(d)
        self.wv, self.bv = _normal(generator, d, d), _zeros(d)
        self.wo, self.bo = _normal(generator, d, d), _zeros(d)
        self.ln2_g, self.ln2_b = _ones(d), _zeros(d)
        self.w1, self.b1 = _normal(generator, d, f), _zeros(f)
        self.w2, self.b2 = _normal(generator, f, d), _zeros(d)

    def _attention(self, y: Tensor) -> Tensor:
        n, d = y.shape
        h, dh = self.n_heads, d // self.n_heads
        q = (y @ self.wq + self.bq).view(n, h, dh).transpose(0, 1)
        k = (y @ self.wk + self.bk).view(n, h, dh).transpose(0, 1)
        v = (y @ self.wv + self.bv).view(n, h, dh).transpose(0, 1)
        att = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(dh), dim=-1)
        ctx = (att @ v).transpose(0, 1).reshape(n, d)
        return ctx @ self.wo + self.bo

    def _maybe_drop(self, x: Tensor) -> Tensor:
        if self.dropout > 0.0 and self.training:
            return nn.functional.dropout(x, p=self.dropout)
        return x

    def forward(self, x: Tensor) -> Tensor:
        x = x + self._maybe_drop(self._attention(layer_norm(x, self.ln1_g, self.ln1_b)))
        y = layer_norm(x, self.ln2_g, self.ln2_b)
        return x + self._maybe_drop(gelu(y @ self.w1 + self.b1) @ self.w2 + self.b2)


class TinyEncoder(nn.Module):
    def __init__(self, config: EncoderConfig, generator: torch.Generator):
        super().__init__()
        config.validate()
        self.config = config
        d = config.d_model
        self.tok_emb = _normal(generator, config.vocab_size, d)
        self.pos_emb = _normal(generator, config.max_len, d)
        self.layers = nn.ModuleList(
            TransformerLayer(config, generator) for _ in range(config.n_layers)
        )
        self.lnf_g, self.lnf_b = _ones(d), _zeros(d)
        self.pool = nn.ParameterDict({role: _normal(generator, d) for role in POOL_ROLES})
        self.eval()

    def output_logits(self, states: Tensor) -> Tensor:
        """Vocabulary logits through the tied token embedding matrix."""
        return states @ self.tok_emb.T


@dataclass
class SequenceStates:
    """Residual-stream snapshots for one sequence.

    ``hidden[0]`` is the embedding-layer output, ``hidden[i]`` the output of
    block i, and ``hidden[-1]`` carries the final layer norm.
    """

    tokens: tuple[int, ...]
    hidden: list[Tensor] = field(default_factory=list)

    @property
    def final(self) -> Tensor:
        return self.hidden[-1]


def encode(
    model: TinyEncoder,
    tokens: Sequence[int],
    override_embeddings: Mapping[int, Tensor] | None = None,
) -> SequenceStates:
    """Run the encoder over one token sequence.

    Positions listed in ``override_embeddings`` use the provided vector in
    place of the token embedding; the position embedding is still added.
    """
    cfg = model.config
    n = len(tokens)
    if n == 0:
        raise DataError("empty token sequence")
    if n > cfg.max_len:
        raise DataError(f"sequence length {n} exceeds max_len {cfg.max_len}")
    for t in tokens:
        if not 0 <= t < cfg.vocab_size:
            raise DataError(f"token id {t} out of range for vocab size {cfg.vocab_size}")
    if override_embeddings:
        for pos, vec in override_embeddings.items():
            if not 0 <= pos < n:
                raise DataError(f"override position {pos} outside sequence of length {n}")
            if tuple(vec.shape) != (cfg.d_model,):
                raise DataError(f"override at {pos} has shape {tuple(vec.shape)}")
            if not torch.isfinite(vec).all():
                raise NumericalError(f"non-finite override vector at position {pos}")
        rows = [
            override_embeddings[i] if i in override_embeddings else model.tok_emb[t]
            for i, t in enumerate(tokens)
        ]
        x = torch.stack(rows) + model.pos_emb[:n]
    else:
        x = model.tok_emb[list(tokens)] + model.pos_emb[:n]
    hidden = [x]
    for layer in model.layers:
        x = layer(x)
        hidden.append(x)
    hidden[-1] = layer_norm(hidden[-1], model.lnf_g, model.lnf_b)
    return SequenceStates(tuple(tokens), hidden)


def self_attentive_pool(model: TinyEncoder, span_states: Tensor | list[Tensor], head: str) -> Tensor:
    """Softmax-weighted sum of span states under the role's scoring vector."""
    if isinstance(span_states, list):
        if not span_states:
            raise DataError("empty span")
        span_states = torch.stack(span_states)
    if span_states.ndim != 2 or span_states.shape[0] == 0:
        raise DataError("empty span")
    if head not in model.pool:
        raise ConfigError(f"unknown pooling head {head!r}")
    weights = torch.softmax(span_states @ model.pool[head], dim=0)
    return weights @ span_states


def sentence_repr(states: SequenceStates) -> Tensor:
    """Mean of final-layer states over non-[PAD] positions."""
    keep = [i for i, t in enumerate(states.tokens) if t != PAD_ID]
    if not keep:
        raise DataError("all-pad sequence")
    return states.final[keep].mean(dim=0)


def backward(parameters: Iterable[tuple[str, Tensor]], loss: Tensor) -> dict[str, Tensor]:
    """Exact reverse-mode gradients of a scalar loss for every named block.

    Blocks outside the loss graph (or a constant loss, e.g. lambda-weighted
    empty objectives) get zero gradients.
    """
    named = list(parameters)
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite loss {float(loss)!r}")
    for _, p in named:
        p.grad = None
    if loss.requires_grad:
        loss.backward()
    return {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in named
    }
