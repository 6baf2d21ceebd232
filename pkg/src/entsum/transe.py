"""Minimal TransE: L2 translation energy with a margin ranking loss.

Plain numpy SGD; the tables here only seed the model's entity embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import ContractError, TripleStore


@dataclass
class TransEEmbeddings:
    entity: np.ndarray  # (|E|, dim), unit rows
    relation: np.ndarray  # (|R|, dim)
    epoch_losses: list[float] = field(default_factory=list)

    def energy(self, h, r, t) -> np.ndarray:
        """``||e_h + r - e_t||_2`` for scalar or array ids."""
        diff = self.entity[h] + self.relation[r] - self.entity[t]
        return np.linalg.norm(diff, axis=-1)


def init_transe(n_entities: int, n_relations: int, dim: int, seed: int) -> TransEEmbeddings:
    rng = np.random.default_rng(seed)
    bound = 6.0 / np.sqrt(dim)
    ent = rng.uniform(-bound, bound, size=(n_entities, dim))
    rel = rng.uniform(-bound, bound, size=(n_relations, dim))
    ent /= np.linalg.norm(ent, axis=1, keepdims=True)
    rel /= np.linalg.norm(rel, axis=1, keepdims=True)
    return TransEEmbeddings(ent, rel)


def _corrupt(rng: np.random.Generator, h: int, t: int, n_entities: int) -> tuple[int, int]:
    """Replace head or tail (coin flip) by a different uniformly drawn entity."""
    repl = int(rng.integers(n_entities - 1))
    if rng.random() < 0.5:
        return (repl + 1 if repl >= h else repl), t
    return h, (repl + 1 if repl >= t else repl)


def train_transe(
    store: TripleStore,
    dim: int = 32,
    epochs: int = 200,
    margin: float = 1.0,
    lr: float = 0.01,
    seed: int = 0,
) -> TransEEmbeddings:
    """Per-triple SGD on ``max(0, margin + E(h,r,t) - E(h',r,t'))``.

    Entity rows are renormalized to unit length after every epoch.
    """
    if len(store) == 0:
        raise ContractError("train_transe needs a non-empty triple store")
    if dim < 2:
        raise ContractError("TransE dim must be >= 2")
    if store.n_entities < 2:
        raise ContractError("TransE needs at least two entities to corrupt triples")
    emb = init_transe(store.n_entities, store.n_relations, dim, seed)
    ent, rel = emb.entity, emb.relation
    rng = np.random.default_rng([seed, 1])
    for _ in range(epochs):
        total = 0.0
        for i in rng.permutation(len(store)):
            h, r, t = (int(x) for x in store.triples[i])
            hc, tc = _corrupt(rng, h, t, store.n_entities)
            pos = ent[h] + rel[r] - ent[t]
            neg = ent[hc] + rel[r] - ent[tc]
            pn, nn = np.linalg.norm(pos), np.linalg.norm(neg)
            loss = margin + pn - nn
            if loss <= 0:
                continue
            total += loss
            gp = pos / max(pn, 1e-12)
            gn = neg / max(nn, 1e-12)
            ent[h] -= lr * gp
            ent[t] += lr * gp
            rel[r] -= lr * (gp - gn)
            ent[hc] += lr * gn
            ent[tc] -= lr * gn
        ent /= np.linalg.norm(ent, axis=1, keepdims=True)
        emb.epoch_losses.append(total)
    return emb
