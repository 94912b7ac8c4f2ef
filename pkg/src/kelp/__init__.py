"""Knowledge-enhanced language pretraining on long-tail entities.

Pipeline: link a corpus against a knowledge graph, score mentions for
knowledge-aware long-tailness, replace selected mention embeddings with
triple-derived pseudo token representations, pretrain a small encoder with a
joint masked-token and relational-decoding objective, and evaluate knowledge
retention with zero-shot cloze probes.
"""

from .corpus import (
    FrequencyTable,
    LinkedSentence,
    Mention,
    PowerLawFit,
    Vocabulary,
    count_frequencies,
    fit_power_law,
    link_entities,
    load_corpus,
)
from .decoder import DecoderParams, DecodingTarget, decode_step, decoding_loss, sampled_softmax_loss
from .detector import DetectionConfig, DetectionReport, MentionScore, detect, klt_score, semantic_importance
from .encoder import EncoderConfig, SequenceStates, TinyEncoder, encode, self_attentive_pool, sentence_repr
from .errors import ConfigError, DataError, KelpError, NumericalError
from .injection import InjectionParams, PseudoEmbedding, choose_triple, component_repr, inject, pseudo_head, pseudo_tail
from .kg import KnowledgeGraph, Triple, load_kg
from .model import ModelBundle, init_model, load_checkpoint, save_checkpoint
from .probe import ClozeQuery, ProbeResult, cloze_predict, evaluate, load_probes
from .training import TrainConfig, mlm_mask, total_loss, train

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
