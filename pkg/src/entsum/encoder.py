"""Embedding construction and the shared multimodal encoder.

One set of ``enc.layers.*`` weights is applied twice: to (text, images) and
to (entities, images).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import nn
from .autograd import Tensor, concat, embedding
from .corpus import T_CLS, T_SEP, ContractError, Document

if TYPE_CHECKING:
    from .model import MultimodalSummarizer


@dataclass
class EncoderOutput:
    h_T_ti: Tensor  # text positions, text-image pass
    h_V_ti: Tensor  # image positions, text-image pass
    h_E_ei: Tensor | None  # entity positions, entity-image pass
    h_V_ei: Tensor | None  # image positions, entity-image pass
    cls_ti: Tensor  # (M, d) v_CLS states, text-image pass
    cls_ei: Tensor | None  # (M, d) v_CLS states, entity-image pass
    truncated: bool = False


def _empty(d: int) -> Tensor:
    return Tensor(np.zeros((0, d)))


def text_ids(tokens: Sequence[int], sentence_lengths: Sequence[int]) -> list[int]:
    """Wrap every sentence as ``t_CLS ... t_SEP``; empty text gives ``[t_CLS, t_SEP]``."""
    if not sentence_lengths:
        sentence_lengths = [len(tokens)]
    out, pos = [], 0
    for n in sentence_lengths:
        out.append(T_CLS)
        out.extend(tokens[pos : pos + n])
        out.append(T_SEP)
        pos += n
    return out


def embed_text(model: MultimodalSummarizer, tokens: Sequence[int], sentence_lengths: Sequence[int]) -> Tensor:
    """``W_t`` rows for the delimited text; length ``L + 2 * #sentences``."""
    if sentence_lengths and sum(sentence_lengths) != len(tokens):
        raise ContractError("sentence_lengths do not cover the tokens")
    return embedding(model["enc.W_t"], text_ids(tokens, sentence_lengths))


def embed_images(model: MultimodalSummarizer, features: np.ndarray) -> Tensor:
    """Per image: ``v_CLS`` then ``|Q|`` projected query rows, plus intra-image positions."""
    cfg = model.config
    features = np.asarray(features, dtype=np.float64)
    d = cfg.d_model
    if features.size == 0 or features.shape[0] == 0:
        return _empty(d)
    if features.ndim != 3 or features.shape[1:] != (cfg.n_queries, cfg.d_q):
        raise ContractError(
            f"image features must be M x {cfg.n_queries} x {cfg.d_q}, got {features.shape}"
        )
    m, q = features.shape[:2]
    if m > cfg.max_images:
        raise ContractError(f"{m} images exceeds max_images={cfg.max_images}")
    proj = Tensor(features) @ model["enc.W_v"]  # (M, Q, d)
    cls = Tensor(np.ones((m, 1, 1))) * model["enc.v_cls"].reshape(1, 1, d)
    rows = concat([cls, proj], axis=1) + model["enc.intra_pos"]
    return rows.reshape(m * (q + 1), d)


def embed_entities(model: MultimodalSummarizer, groups: Sequence[Sequence[int]]) -> Tensor:
    """``W_e2 . W_e1`` rows with one ``k_CLS`` ahead of each sentence group.

    No entities at all still yields a single ``k_CLS`` row.
    """
    table = model["enc.W_e1"]
    n_ent = table.shape[0]
    groups = [list(g) for g in groups if len(g)] or [[]]
    ids = []
    for g in groups:
        for e in g:
            if not 0 <= e < n_ent:
                raise ContractError(f"unknown entity id {e}")
        ids.append(n_ent)  # k_CLS sits after the real rows
        ids.extend(g)
    full = concat([table, model["enc.k_cls"].reshape(1, -1)], axis=0)
    return embedding(full, ids) @ model["enc.W_e2"]


def encode(model: MultimodalSummarizer, part: Tensor, image_part: Tensor) -> tuple[Tensor, Tensor]:
    """Run the shared encoder over ``[part, image_part] + multi_pos``.

    Returns the hidden states split back at the modality boundary.
    """
    cfg = model.config
    n_a, n_b = part.shape[0], image_part.shape[0]
    n = n_a + n_b
    if n > cfg.max_context:
        raise ContractError(f"encoder input of {n} positions exceeds max_context={cfg.max_context}")
    x = concat([part, image_part], axis=0) if n_b else part
    x = x + model["enc.multi_pos"][:n]
    for i in range(cfg.enc_layers):
        x = nn.encoder_layer(model.params, f"enc.layers.{i}", x, cfg.n_heads, cfg.ln_eps)
    x = nn.ln(model.params, "enc.ln_out", x, cfg.ln_eps)
    return x[:n_a], (x[n_a:] if n_b else _empty(cfg.d_model))


def cls_states(h_v: Tensor, n_queries: int) -> Tensor:
    """Rows holding each image's ``v_CLS`` output."""
    return h_v[:: n_queries + 1]


def fit_budget(doc: Document, max_context: int, n_queries: int) -> tuple[list[int], list[int], list[list[int]], bool]:
    """Trim text (leading tokens kept) and then entities so each pass fits with all images.

    Images are never dropped.
    """
    image_rows = doc.n_images * (n_queries + 1)
    budget = max_context - image_rows
    if budget < 2:
        raise ContractError(f"{doc.id}: images alone use {image_rows} of max_context={max_context}")
    truncated = False
    tokens, lengths, used, pos = [], [], 0, 0
    for n in doc.sentence_lengths or ([len(doc.text_tokens)] if doc.text_tokens else []):
        room = budget - used - 2
        if room <= 0:
            truncated = True
            break
        take = min(n, room)
        tokens.extend(doc.text_tokens[pos : pos + take])
        lengths.append(take)
        used += take + 2
        pos += n
        if take < n:
            truncated = True
            break
    groups, used = [], 0
    for g in doc.entity_groups():
        room = budget - used - 1
        if room <= 0:
            truncated = True
            break
        take = g[:room]
        groups.append(take)
        used += len(take) + 1
        if len(take) < len(g):
            truncated = True
            break
    return tokens, lengths, groups, truncated


def encode_document(model: MultimodalSummarizer, doc: Document, entity_pass: bool = True) -> EncoderOutput:
    cfg = model.config
    tokens, lengths, groups, truncated = fit_budget(doc, cfg.max_context, cfg.n_queries)
    e_v = embed_images(model, doc.images)
    h_T, h_V = encode(model, embed_text(model, tokens, lengths), e_v)
    cls_ti = cls_states(h_V, cfg.n_queries)
    if not entity_pass:
        return EncoderOutput(h_T, h_V, None, None, cls_ti, None, truncated)
    h_E, h_V_e = encode(model, embed_entities(model, groups), e_v)
    return EncoderOutput(h_T, h_V, h_E, h_V_e, cls_ti, cls_states(h_V_e, cfg.n_queries), truncated)
