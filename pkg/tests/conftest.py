from __future__ import annotations

import sys

import numpy as np
import pytest

from entsum.corpus import CorpusConfig, Document, generate_corpus
from entsum.model import MultimodalSummarizer, ModelConfig


def tiny_config(**overrides) -> ModelConfig:
    base = dict(vocab_size=20, n_entities=6, d_q=5, n_queries=2, d_model=8, n_heads=2, d_ff=12,
                enc_layers=1, dec_layers=1, entity_dim=4, max_summary_len=6, max_context=64,
                max_images=4, init_std=0.3, seed=0)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_model(**overrides) -> MultimodalSummarizer:
    return MultimodalSummarizer.initialize(tiny_config(**overrides))


def tiny_doc(rng: np.random.Generator, cfg: ModelConfig, doc_id="d0", n_images=2, n_text=5) -> Document:
    tokens = rng.integers(7, cfg.vocab_size, size=n_text).tolist()
    split = max(1, n_text // 2)
    lengths = [split, n_text - split] if n_text > split else [n_text]
    ents = [(int(e), 0) for e in rng.choice(cfg.n_entities, size=2, replace=False)] + [(int(rng.integers(cfg.n_entities)), len(lengths) - 1)]
    images = rng.normal(size=(n_images, cfg.n_queries, cfg.d_q))
    summary = rng.integers(7, cfg.vocab_size, size=3).tolist()
    return Document(doc_id, tokens, lengths, images, ents, summary, reference_images=[0] if n_images else None)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(CorpusConfig(n_docs=8, seed=3))


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.RESULTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in acceptance.RESULTS:
            terminalreporter.write_line(line)
