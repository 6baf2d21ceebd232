from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entsum.arrayfile import save_arrays
from entsum.corpus import (
    RESERVED_TOKENS,
    UNK,
    ContractError,
    CorpusConfig,
    EntityLexicon,
    LoadError,
    TripleStore,
    Vocab,
    extract_entities,
    generate_corpus,
    load_msmo_jsonl,
    save_jsonl,
    segment_sentences,
    split_words,
    tokenize,
)


# -- tokenize ---------------------------------------------------------------------------------

def test_tokenize_small_dictionary():
    assert tokenize("The cat.", {"<unk>": 1, "the": 5, "cat": 6, ".": 7}) == [5, 6, 7]


def test_tokenize_empty():
    assert tokenize("", {"<unk>": 1}) == []


def test_tokenize_oov():
    vocab = Vocab(list(RESERVED_TOKENS) + ["cat"])
    assert tokenize("zzz", vocab) == [UNK]


def test_split_words_punctuation():
    assert split_words("Rail-road, over THE river!") == ["rail", "-", "road", ",", "over", "the", "river", "!"]


def test_segment_sentences():
    assert segment_sentences(["a", "b", ".", "c", "?", "d"]) == [3, 2, 1]
    assert segment_sentences([]) == []


def test_vocab_requires_reserved_prefix():
    with pytest.raises(ContractError):
        Vocab(["cat", "dog"])


def test_vocab_roundtrip(tmp_path):
    v = Vocab(list(RESERVED_TOKENS) + ["a", "b"])
    v.save(tmp_path / "v.txt")
    assert list(Vocab.load(tmp_path / "v.txt")) == list(v)


# -- entity extraction ------------------------------------------------------------------------

def _lex(*forms):
    return EntityLexicon({tuple(f.split()): i for i, f in enumerate(forms)})


def test_longest_match_wins():
    lex = _lex("yangtze river", "river")
    got = extract_entities("yangtze river bridge".split(), lex)
    assert [(m.entity_id, m.start, m.end) for m in got] == [(0, 0, 2)]


def test_empty_lexicon():
    assert extract_entities("yangtze river".split(), EntityLexicon({})) == []


def test_two_entities_in_textual_order():
    lex = _lex("yangtze river", "rail road steel arch bridge")
    got = extract_entities("rail road steel arch bridge over the yangtze river".split(), lex)
    assert [m.entity_id for m in got] == [1, 0]


def test_extract_with_vocab_ids():
    vocab = Vocab(list(RESERVED_TOKENS) + ["big", "cat", "sat"])
    ids = tokenize("the big cat sat", vocab)
    got = extract_entities(ids, _lex("big cat"), vocab)
    assert [(m.entity_id, m.start, m.end) for m in got] == [(0, 1, 3)]


words = st.lists(st.sampled_from(["a", "b", "c", "d"]), max_size=20)
forms = st.lists(st.lists(st.sampled_from(["a", "b", "c", "d"]), min_size=1, max_size=3).map(tuple),
                 max_size=6, unique=True)


@settings(max_examples=150, deadline=None)
@given(words, forms)
def test_matches_never_overlap_and_are_in_lexicon(text, surface):
    lex = EntityLexicon({f: i for i, f in enumerate(surface)})
    got = extract_entities(text, lex)
    for m in got:
        assert lex.entries[tuple(text[m.start : m.end])] == m.entity_id
    spans = sorted((m.start, m.end) for m in got)
    assert all(a_end <= b_start for (_, a_end), (b_start, _) in zip(spans, spans[1:]))
    assert [m.start for m in got] == sorted(m.start for m in got)
    assert len({m.entity_id for m in got}) == len(got)


def test_lexicon_rejects_sparse_ids():
    with pytest.raises(ContractError):
        EntityLexicon({("a",): 0, ("b",): 2})


def test_lexicon_tsv_roundtrip(tmp_path):
    lex = EntityLexicon({("yangtze", "river"): 0, ("bridge",): 1}, {0: "objects_entities"})
    lex.save_tsv(tmp_path / "lex.tsv")
    assert (tmp_path / "lex.tsv").read_text().splitlines()[0] == "yangtze river\t0\tobjects_entities"
    back = EntityLexicon.load_tsv(tmp_path / "lex.tsv")
    assert back.entries == lex.entries and back.categories == lex.categories


def test_lexicon_unknown_category():
    with pytest.raises(ContractError):
        EntityLexicon({("a",): 0}, {0: "weather"})


def test_triple_store_validation(tmp_path):
    with pytest.raises(ContractError):
        TripleStore(np.array([[0, 0, 5]]), 3, 1)
    with pytest.raises(ContractError):
        TripleStore(np.array([[0, 0, 1], [0, 0, 1]]), 3, 1)
    store = TripleStore(np.array([[0, 0, 1], [1, 1, 2]]), 3, 2)
    store.save_tsv(tmp_path / "t.tsv")
    back = TripleStore.load_tsv(tmp_path / "t.tsv", n_entities=3)
    np.testing.assert_array_equal(back.triples, store.triples)
    assert back.n_relations == 2


# -- generation -------------------------------------------------------------------------------

def test_generation_is_deterministic():
    a = generate_corpus(CorpusConfig(n_docs=5, seed=11))
    b = generate_corpus(CorpusConfig(n_docs=5, seed=11))
    assert all(x.equals(y) for x, y in zip(a.documents, b.documents))
    assert list(a.vocab) == list(b.vocab) and a.lexicon.entries == b.lexicon.entries
    np.testing.assert_array_equal(a.triples.triples, b.triples.triples)


def test_zero_docs():
    c = generate_corpus(CorpusConfig(n_docs=0))
    assert c.documents == [] and len(c.lexicon) == 30


@pytest.fixture(scope="module")
def hundred():
    return generate_corpus(CorpusConfig(n_docs=100))


def test_default_corpus_invariants(hundred):
    cfg = hundred.config
    assert len(hundred.documents) == 100
    assert len(hundred.vocab) == cfg.vocab_size
    for doc in hundred.documents:
        assert len(doc.text_tokens) >= 1
        assert doc.n_images <= cfg.max_images
        assert doc.images.shape[1:] == (cfg.n_queries, cfg.d_q)
        assert all(0 <= e < len(hundred.lexicon) for e, _ in doc.entities)
        assert doc.reference_images and len(doc.reference_images) <= 3
        assert set(doc.reference_images) <= set(range(doc.n_images))
        assert len(doc.reference_summary) <= cfg.max_summary_len
        assert max(doc.text_rows(), doc.entity_rows()) + doc.image_rows() <= cfg.max_context


def test_reference_images_show_summary_entities(hundred):
    entity_words = hundred.world.entity_words
    for doc in hundred.documents:
        summary = doc.reference_summary
        for i in doc.reference_images:
            w = entity_words[doc.image_sources[i]]
            assert any(summary[k : k + len(w)] == w for k in range(len(summary)))


def test_summary_entities_appear_in_text(hundred):
    for doc in hundred.documents:
        ents = {e for e, _ in doc.entities}
        for i in doc.reference_images:
            assert doc.image_sources[i] in ents


def test_infeasible_summary_length():
    with pytest.raises(ContractError):
        generate_corpus(CorpusConfig(n_docs=1, max_summary_len=2))


def test_vocab_too_small():
    with pytest.raises(ContractError):
        generate_corpus(CorpusConfig(vocab_size=20))


# -- JSONL loading ----------------------------------------------------------------------------

def test_jsonl_roundtrip(tmp_path, small_corpus):
    save_jsonl(small_corpus.documents, tmp_path / "c.jsonl")
    back = load_msmo_jsonl(tmp_path / "c.jsonl", n_entities=30, d_q=32)
    assert len(back) == len(small_corpus.documents)
    assert all(a.equals(b) for a, b in zip(small_corpus.documents, back))


def test_empty_file(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert load_msmo_jsonl(tmp_path / "e.jsonl") == []


def test_missing_field_names_line(tmp_path, small_corpus):
    obj = small_corpus.documents[0].to_json()
    del obj["text_tokens"]
    (tmp_path / "bad.jsonl").write_text(json.dumps(obj) + "\n")
    with pytest.raises(LoadError, match="^line 1: missing text_tokens$"):
        load_msmo_jsonl(tmp_path / "bad.jsonl")


def test_oversize_document_cites_max_context(tmp_path, small_corpus):
    save_jsonl(small_corpus.documents[:2], tmp_path / "c.jsonl")
    with pytest.raises(LoadError, match="line 1: .*max_context=20"):
        load_msmo_jsonl(tmp_path / "c.jsonl", max_context=20)


def test_unknown_entity_rejected(tmp_path, small_corpus):
    obj = small_corpus.documents[0].to_json()
    obj["entities"].append([999, 0])
    (tmp_path / "bad.jsonl").write_text("\n" + json.dumps(obj) + "\n")
    with pytest.raises(LoadError, match="line 2: .*entity id 999"):
        load_msmo_jsonl(tmp_path / "bad.jsonl", n_entities=30)


def test_side_file_images(tmp_path, small_corpus):
    doc = small_corpus.documents[0]
    obj = doc.to_json()
    del obj["images"]
    obj["image_file"] = "feats.nar"
    save_arrays(tmp_path / "feats.nar", {doc.id: doc.images})
    (tmp_path / "c.jsonl").write_text(json.dumps(obj) + "\n")
    (back,) = load_msmo_jsonl(tmp_path / "c.jsonl")
    assert back.equals(doc)


def test_invalid_json_line(tmp_path):
    (tmp_path / "c.jsonl").write_text("{not json\n")
    with pytest.raises(LoadError, match="line 1: invalid JSON"):
        load_msmo_jsonl(tmp_path / "c.jsonl")
