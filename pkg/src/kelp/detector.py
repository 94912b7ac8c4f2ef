"""Knowledge-aware long-tail mention scoring and selection.

Each mention gets a corpus frequency, a semantic importance (reciprocal cosine
between the sentence representation and the same sentence with the mention
collapsed to a single [UHN] token), and a clamped multi-hop connectivity. The
combined score is indicator(freq < r_freq) * si * kc; mentions with a positive
score are candidates and, under the long-tail policy, those at or below the
per-sentence candidate average are selected for injection.

Detection is a data-selection step and is never differentiated; all encoder
calls run under no_grad. The cosine reduction is done in plain Python floats
so an independent recomputation can match it exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from .corpus import FrequencyTable, LinkedSentence, Mention, UHN_ID
from .encoder import TinyEncoder, encode, sentence_repr
from .errors import ConfigError, NumericalError
from .kg import KnowledgeGraph

POLICIES = ("long_tail", "high_frequency", "all", "none")


@dataclass
class DetectionConfig:
    r_freq: float | None = None  # None resolves to the corpus median frequency
    r_hop: int = 2
    r_min: int = 1
    r_max: int = 30
    cosine_floor: float = 1e-6
    policy: str = "long_tail"
    selection_direction: str = "low"  # literal rule; "high" selects above-average

    def validate(self) -> None:
        if self.r_freq is not None and self.r_freq < 1:
            raise ConfigError(f"r_freq must be >= 1, got {self.r_freq}")
        if self.r_hop < 1:
            raise ConfigError(f"r_hop must be >= 1, got {self.r_hop}")
        if self.r_min > self.r_max:
            raise ConfigError(f"r_min {self.r_min} > r_max {self.r_max}")
        if self.cosine_floor <= 0:
            raise ConfigError(f"cosine_floor must be positive, got {self.cosine_floor}")
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.selection_direction not in ("low", "high"):
            raise ConfigError(f"selection_direction must be low or high")

    def resolved_r_freq(self, table: FrequencyTable) -> float:
        return self.r_freq if self.r_freq is not None else table.median()


@dataclass
class MentionScore:
    mention: Mention
    freq: float
    si: float
    kc: int
    klt: float
    selected: bool = False


@dataclass
class DetectionReport:
    sent_id: int
    scores: list[MentionScore] = field(default_factory=list)
    average_klt: float = 0.0

    @property
    def selected(self) -> list[Mention]:
        return [s.mention for s in self.scores if s.selected]


def _cosine(u: list[float], v: list[float]) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(a * a for a in v))
    if nu == 0.0 or nv == 0.0:
        raise NumericalError("degenerate representation (zero norm)")
    return dot / (nu * nv)


@torch.no_grad()
def semantic_importance(
    model: TinyEncoder,
    sentence: LinkedSentence,
    mention: Mention,
    cosine_floor: float = 1e-6,
    h_o: list[float] | None = None,
) -> float:
    """Reciprocal cosine similarity between the sentence and its [UHN] variant.

    ``h_o`` may carry a precomputed original-sentence representation (as a
    float list) so per-sentence work is shared across mentions.
    """
    if h_o is None:
        h_o = sentence_repr(encode(model, sentence.tokens)).tolist()
    replaced = sentence.tokens[: mention.start] + [UHN_ID] + sentence.tokens[mention.end :]
    h_rep = sentence_repr(encode(model, replaced)).tolist()
    return 1.0 / max(_cosine(h_o, h_rep), cosine_floor)


def klt_score(freq: float, si: float, kc: int, r_freq: float) -> float:
    """indicator(freq < r_freq) * si * kc."""
    return si * kc if freq < r_freq else 0.0


def select_mask(klts: list[float], direction: str = "low") -> list[bool]:
    """At-or-below (resp. at-or-above) candidate-average selection rule.

    Scale-invariant in the scores and guaranteed to select at least one
    candidate when any exist. The extremum is always included: the minimum is
    never above the exact average, but the rounded average of near-identical
    scores can drop below it, so the comparison alone would select nothing.
    """
    if not klts:
        return []
    average = sum(klts) / len(klts)
    if direction == "low":
        bound = min(klts)
        return [k <= average or k == bound for k in klts]
    bound = max(klts)
    return [k >= average or k == bound for k in klts]


def detect(
    sentence: LinkedSentence,
    kg: KnowledgeGraph,
    freq_table: FrequencyTable,
    model: TinyEncoder,
    cfg: DetectionConfig,
) -> DetectionReport:
    """Score every mention and select injection targets under the policy."""
    cfg.validate()
    r_freq = cfg.resolved_r_freq(freq_table)
    report = DetectionReport(sent_id=sentence.sent_id)
    if not sentence.mentions:
        return report
    with torch.no_grad():
        h_o = sentence_repr(encode(model, sentence.tokens)).tolist()
    for m in sentence.mentions:
        freq = freq_table.freq(m.entity)
        si = semantic_importance(model, sentence, m, cfg.cosine_floor, h_o=h_o)
        kc = kg.knowledge_connectivity(m.entity, cfg.r_hop, cfg.r_min, cfg.r_max)
        report.scores.append(
            MentionScore(mention=m, freq=freq, si=si, kc=kc, klt=klt_score(freq, si, kc, r_freq))
        )
    candidates = [s for s in report.scores if s.klt > 0.0]
    if candidates:
        report.average_klt = sum(s.klt for s in candidates) / len(candidates)
    if cfg.policy == "long_tail":
        mask = select_mask([s.klt for s in candidates], cfg.selection_direction)
        for s, chosen in zip(candidates, mask):
            s.selected = chosen
    elif cfg.policy == "high_frequency":
        for s in report.scores:
            s.selected = s.freq >= r_freq
    elif cfg.policy == "all":
        for s in report.scores:
            s.selected = True
    return report


def report_record(report: DetectionReport, kg: KnowledgeGraph) -> dict:
    """JSON-serializable audit record for one sentence."""
    return {
        "sentence_id": report.sent_id,
        "average_klt": report.average_klt,
        "mentions": [
            {
                "entity": kg.entity_name(s.mention.entity),
                "span": [s.mention.start, s.mention.end],
                "freq": s.freq,
                "si": s.si,
                "kc": s.kc,
                "klt": s.klt,
                "selected": s.selected,
            }
            for s in report.scores
        ],
    }
