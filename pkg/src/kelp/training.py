"""Pretraining orchestration: masking, batch assembly, joint loss, updates.

Each step samples a batch of linked sentences, runs detection with the
current weights (never differentiated), picks one triple per selected mention,
builds pseudo embeddings, masks tokens outside the injected spans, runs the
forward pass with embedding overrides, and combines the masked-token loss
with the relational decoding loss as lambda1 * L_MLM + (1 - lambda1) * L_De.

Runs are bit-reproducible: all sampling derives from the run seed, updates
are plain (optionally momentum) SGD in float64, and torch is pinned to one
thread for the duration of the run.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

import torch
from torch import Tensor

from .corpus import MASK_ID, FrequencyTable, LinkedSentence, Vocabulary
from .decoder import DecodeItem, decoding_loss, make_decoding_target
from .detector import DetectionConfig, detect
from .encoder import encode
from .errors import ConfigError, NumericalError
from .injection import choose_triple, inject, pseudo_head, pseudo_tail
from .kg import KnowledgeGraph
from .model import ModelBundle, save_checkpoint
from .seeds import stable_rng


@dataclass
class TrainConfig:
    steps: int = 500
    batch_size: int = 8
    learning_rate: float = 0.5
    lr_schedule: str = "constant"  # constant | linear
    optimizer: str = "sgd"  # sgd | momentum | adam
    momentum: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda1: float = 0.5
    mlm_rate: float = 0.15
    n_negatives: int = 20
    seed: int = 0
    checkpoint_every: int = 0  # 0 = initial and final checkpoints only

    def validate(self) -> None:
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.lr_schedule not in ("constant", "linear"):
            raise ConfigError("lr_schedule must be constant or linear")
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ConfigError("optimizer must be sgd, momentum, or adam")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0.0 <= self.lambda1 <= 1.0:
            raise ConfigError(f"lambda1 must be in [0, 1], got {self.lambda1}")
        if not 0.0 <= self.mlm_rate <= 1.0:
            raise ConfigError(f"mlm_rate must be in [0, 1], got {self.mlm_rate}")
        if self.n_negatives < 1:
            raise ConfigError(f"n_negatives must be >= 1, got {self.n_negatives}")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "linear" and self.steps > 0:
            return self.learning_rate * (1.0 - (step - 1) / self.steps)
        return self.learning_rate


def mlm_mask(
    tokens: Sequence[int],
    rate: float,
    seed,
    excluded_spans: Sequence[tuple[int, int]] = (),
    vocab: Vocabulary | None = None,
) -> tuple[list[int], dict[int, int]]:
    """Standard masked-token corruption outside excluded spans.

    floor(rate * eligible) positions are chosen; of those 80% become [MASK],
    10% a random regular vocabulary token, 10% stay unchanged. The label map
    records originals at every chosen position.
    """
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"mask rate must be in [0, 1], got {rate}")
    excluded: set[int] = set()
    for start, end in excluded_spans:
        excluded.update(range(start, end))
    eligible = [i for i in range(len(tokens)) if i not in excluded]
    rng = stable_rng("mlm", seed)
    chosen = rng.sample(eligible, int(rate * len(eligible)))
    masked = list(tokens)
    labels: dict[int, int] = {}
    for pos in chosen:
        labels[pos] = masked[pos]
        roll = rng.random()
        if roll < 0.8:
            masked[pos] = MASK_ID
        elif roll < 0.9 and vocab is not None and len(vocab.regular_ids()) > 0:
            regular = vocab.regular_ids()
            masked[pos] = regular[rng.randrange(len(regular))]
        # else: token stays unchanged, the label still applies
    return masked, labels


def total_loss(l_mlm: Tensor, l_de: Tensor, lambda1: float) -> Tensor:
    """Convex combination lambda1 * L_MLM + (1 - lambda1) * L_De."""
    if not (torch.isfinite(l_mlm) and torch.isfinite(l_de)):
        raise NumericalError(
            "non-finite loss components:"
            f" l_mlm={float(l_mlm.detach())!r} l_de={float(l_de.detach())!r}"
        )
    return lambda1 * l_mlm + (1.0 - lambda1) * l_de


@dataclass
class TrainingBatch:
    """One sentence's assembled training inputs."""

    sentence: LinkedSentence
    masked_tokens: list[int]
    labels: dict[int, int]  # masked position -> original token id
    injected: list[tuple]  # (Mention, Triple, role)
    pseudos: list = field(default_factory=list)


@dataclass
class StepStats:
    l_mlm: float
    l_de: float
    l_total: float
    n_injected: int
    n_targets: int
    n_labels: int


@dataclass
class TrainResult:
    final_checkpoint: str
    metrics_path: str
    steps_completed: int


def _mlm_loss_terms(bundle: ModelBundle, states, labels: dict[int, int]) -> Tensor:
    total = torch.zeros((), dtype=torch.float64)
    for pos, original in labels.items():
        logits = bundle.encoder.output_logits(states.final[pos])
        total = total + (torch.logsumexp(logits, dim=0) - logits[original])
    return total


def _assemble(
    sentence: LinkedSentence,
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    freq_table: FrequencyTable,
    bundle: ModelBundle,
    det_cfg: DetectionConfig,
    train_cfg: TrainConfig,
    step: int,
    slot: int,
) -> TrainingBatch:
    """Detection, triple choice, and masking for one sentence (no gradients)."""
    report = detect(sentence, kg, freq_table, bundle.encoder, det_cfg)
    injected = []
    for mention in report.selected:
        picked = choose_triple(kg, mention.entity, seed=(train_cfg.seed, sentence.sent_id))
        if picked is None:
            continue  # no knowledge available; mention left unmodified
        triple, role = picked
        injected.append((mention, triple, role))
    spans = [(m.start, m.end) for m, _, _ in injected]
    masked, labels = mlm_mask(
        sentence.tokens,
        train_cfg.mlm_rate,
        seed=(train_cfg.seed, "mask", step, slot),
        excluded_spans=spans,
        vocab=vocab,
    )
    for pos in labels:
        for start, end in spans:
            if start <= pos < end:
                raise NumericalError("MLM label inside an injected span")
    return TrainingBatch(sentence=sentence, masked_tokens=masked, labels=labels, injected=injected)


def train_step(
    step: int,
    corpus: Sequence[LinkedSentence],
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    freq_table: FrequencyTable,
    bundle: ModelBundle,
    train_cfg: TrainConfig,
    det_cfg: DetectionConfig,
    optimizer_state: dict | None = None,
) -> StepStats:
    """One optimization step; returns the step's loss statistics."""
    rng = stable_rng("batch", train_cfg.seed, step)
    indices = [rng.randrange(len(corpus)) for _ in range(train_cfg.batch_size)]
    batches = [
        _assemble(corpus[idx], kg, vocab, freq_table, bundle, det_cfg, train_cfg, step, slot)
        for slot, idx in enumerate(indices)
    ]

    mlm_sum = torch.zeros((), dtype=torch.float64)
    n_labels = 0
    n_injected = 0
    decode_items: list[DecodeItem] = []
    for batch in batches:
        override = None
        if batch.injected:
            for mention, triple, role in batch.injected:
                builder = pseudo_head if role == "head" else pseudo_tail
                pseudo = builder(bundle.encoder, bundle.injection, kg, vocab, triple)
                pseudo.mention = mention
                batch.pseudos.append(pseudo)
            override = inject(batch.sentence, [m for m, _, _ in batch.injected], batch.pseudos)
        states = encode(bundle.encoder, batch.masked_tokens, override)
        mlm_sum = mlm_sum + _mlm_loss_terms(bundle, states, batch.labels)
        n_labels += len(batch.labels)
        n_injected += len(batch.injected)
        for pseudo in batch.pseudos:
            target = make_decoding_target(
                kg, vocab, pseudo.triple, pseudo.role, train_cfg.n_negatives, seed=train_cfg.seed
            )
            decode_items.append(
                DecodeItem(
                    target=target,
                    states=states,
                    mention=pseudo.mention,
                    relation_repr=pseudo.relation_repr,
                )
            )

    l_mlm = mlm_sum / n_labels if n_labels else torch.zeros((), dtype=torch.float64)
    l_de, n_targets = decoding_loss(
        bundle.encoder,
        bundle.decoder,
        decode_items,
        kg,
        vocab,
        train_cfg.n_negatives,
        seed=(train_cfg.seed, "negfill", step),
    )
    loss = total_loss(l_mlm, l_de, train_cfg.lambda1)
    grads = bundle.gradients(loss)

    lr = train_cfg.lr_at(step)
    state = optimizer_state if optimizer_state is not None else {}
    with torch.no_grad():
        for name, p in bundle.named_parameters():
            if not p.requires_grad:
                continue
            g = grads[name]
            if train_cfg.optimizer == "momentum":
                buf = state.setdefault(name, torch.zeros_like(p))
                buf.mul_(train_cfg.momentum).add_(g)
                p.add_(buf, alpha=-lr)
            elif train_cfg.optimizer == "adam":
                m = state.setdefault(f"{name}.m", torch.zeros_like(p))
                v = state.setdefault(f"{name}.v", torch.zeros_like(p))
                m.mul_(train_cfg.momentum).add_(g, alpha=1 - train_cfg.momentum)
                v.mul_(train_cfg.adam_beta2).addcmul_(g, g, value=1 - train_cfg.adam_beta2)
                m_hat = m / (1 - train_cfg.momentum**step)
                v_hat = v / (1 - train_cfg.adam_beta2**step)
                p.addcdiv_(m_hat, v_hat.sqrt() + train_cfg.adam_eps, value=-lr)
            else:
                p.add_(g, alpha=-lr)

    return StepStats(
        l_mlm=float(l_mlm.detach()),
        l_de=float(l_de.detach()),
        l_total=float(loss.detach()),
        n_injected=n_injected,
        n_targets=n_targets,
        n_labels=n_labels,
    )


def train(
    corpus: Sequence[LinkedSentence],
    kg: KnowledgeGraph,
    vocab: Vocabulary,
    freq_table: FrequencyTable,
    bundle: ModelBundle,
    train_cfg: TrainConfig,
    det_cfg: DetectionConfig,
    out_dir: str,
) -> TrainResult:
    """Full pretraining run with metrics and checkpoints under ``out_dir``.

    On a non-finite loss the run halts: metrics up to the failing step stay
    flushed, the last good checkpoint stays on disk, and the NumericalError
    propagates to the caller.
    """
    train_cfg.validate()
    det_cfg.validate()
    if not corpus:
        raise ConfigError("empty corpus")
    if det_cfg.r_freq is None:
        det_cfg = replace(det_cfg, r_freq=freq_table.median())
    os.makedirs(out_dir, exist_ok=True)
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    save_checkpoint(os.path.join(out_dir, "checkpoint_init.dkpt"), bundle)
    optimizer_state: dict = {}
    steps_done = 0
    try:
        with open(metrics_path, "w", encoding="utf-8") as metrics:
            for step in range(1, train_cfg.steps + 1):
                stats = train_step(
                    step,
                    corpus,
                    kg,
                    vocab,
                    freq_table,
                    bundle,
                    train_cfg,
                    det_cfg,
                    optimizer_state,
                )
                steps_done = step
                record = {
                    "step": step,
                    "l_mlm": stats.l_mlm,
                    "l_de": stats.l_de,
                    "l_total": stats.l_total,
                    "n_injected": stats.n_injected,
                    "n_targets": stats.n_targets,
                    "n_labels": stats.n_labels,
                    "lr": train_cfg.lr_at(step),
                }
                if stats.n_targets == 0:
                    record["empty_decode"] = True
                metrics.write(json.dumps(record) + "\n")
                metrics.flush()
                if train_cfg.checkpoint_every and step % train_cfg.checkpoint_every == 0:
                    save_checkpoint(os.path.join(out_dir, f"checkpoint_{step:06d}.dkpt"), bundle)
    finally:
        torch.set_num_threads(n_threads)
    final_path = os.path.join(out_dir, "checkpoint_final.dkpt")
    save_checkpoint(final_path, bundle)
    return TrainResult(
        final_checkpoint=final_path, metrics_path=metrics_path, steps_completed=steps_done
    )
