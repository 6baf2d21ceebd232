from __future__ import annotations

import numpy as np
import pytest

from entsum.corpus import ContractError, TripleStore
from entsum.transe import init_transe, train_transe


def test_single_triple_beats_reversal():
    store = TripleStore(np.array([[0, 0, 1]]), n_entities=2, n_relations=1)
    emb = train_transe(store, dim=4, epochs=200)
    assert emb.energy(0, 0, 1) < emb.energy(1, 0, 0) - 0.1


def test_zero_epochs_is_initialization():
    store = TripleStore(np.array([[0, 0, 1], [1, 0, 2]]), 3, 1)
    emb = train_transe(store, dim=5, epochs=0, seed=9)
    init = init_transe(3, 1, 5, seed=9)
    np.testing.assert_array_equal(emb.entity, init.entity)
    np.testing.assert_array_equal(emb.relation, init.relation)


def ring(n=10):
    return TripleStore(np.array([[i, 0, (i + 1) % n] for i in range(n)]), n, 1)


def test_ring_true_beats_random():
    store = ring()
    emb = train_transe(store, dim=8, epochs=200)
    true = emb.energy(store.triples[:, 0], 0, store.triples[:, 2]).mean()
    rng = np.random.default_rng(0)
    h, t = rng.integers(10, size=100), rng.integers(10, size=100)
    keep = (t - h) % 10 != 1
    assert true < emb.energy(h[keep], 0, t[keep]).mean()


def test_entities_unit_norm_after_training():
    emb = train_transe(ring(), dim=6, epochs=3)
    np.testing.assert_allclose(np.linalg.norm(emb.entity, axis=1), 1.0, atol=1e-12)
    assert len(emb.epoch_losses) == 3


def test_deterministic():
    a = train_transe(ring(), dim=4, epochs=10, seed=2)
    b = train_transe(ring(), dim=4, epochs=10, seed=2)
    assert np.array_equal(a.entity, b.entity) and np.array_equal(a.relation, b.relation)


def test_empty_store():
    with pytest.raises(ContractError):
        train_transe(TripleStore(np.zeros((0, 3)), 3, 1))


def test_dim_too_small():
    with pytest.raises(ContractError):
        train_transe(ring(), dim=1)
