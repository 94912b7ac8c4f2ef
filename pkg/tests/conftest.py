import pytest
import torch

from kelp.corpus import build_vocabulary, count_frequencies, link_entities
from kelp.encoder import EncoderConfig
from kelp.kg import KnowledgeGraph
from kelp.model import init_model

torch.set_num_threads(1)


@pytest.fixture
def tiny_kg():
    return KnowledgeGraph.from_triples(
        [
            ("paris", "capital of", "france"),
            ("lyon", "city in", "france"),
            ("france", "borders", "spain"),
            ("spain", "borders", "portugal"),
            ("new york city", "city in", "usa"),
            ("new york", "state of", "usa"),
        ],
        descriptions={"paris": "a large city", "france": "a country in europe"},
    )


@pytest.fixture
def toy_world(tiny_kg):
    lines = [
        "[[paris]] is the capital of [[france]] today",
        "lyon is a city in france",
        "spain borders portugal quietly",
        "the old town of paris is quiet",
        "new york city is big",
        "france and spain share a border",
    ]
    vocab = build_vocabulary(lines, tiny_kg)
    corpus = [link_entities(l, tiny_kg, vocab, max_len=32, sent_id=i) for i, l in enumerate(lines)]
    freq = count_frequencies(corpus)
    return tiny_kg, vocab, corpus, freq


@pytest.fixture
def small_bundle(toy_world):
    _, vocab, _, _ = toy_world
    config = EncoderConfig(
        d_model=16, n_layers=2, n_heads=2, d_ff=32, max_len=32, vocab_size=len(vocab)
    )
    return init_model(config, seed=7)
