"""Gated image fusion, decoder memory, the summarization loss and decoding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import nn
from .autograd import Tensor, as_tensor, concat, cross_entropy, embedding, log_softmax, no_grad
from .corpus import BOS, EOS, ContractError

if TYPE_CHECKING:
    from .model import MultimodalSummarizer


@dataclass
class GateParams:
    W1: Tensor  # (2d, d_g)
    b1: Tensor  # (d_g,)
    W2: Tensor  # (d_g, 1)
    b2: Tensor  # (1,)


def gate_weight(h_T_ti: Tensor, h_E_ei: Tensor, gate: GateParams) -> Tensor:
    """One fusion weight per document: sigmoid(W2 relu(W1 [mean h_T ; mean h_E] + b1) + b2).

    Returns a shape-(1,) tensor in (0, 1).
    """
    if h_T_ti.shape[0] == 0 or h_E_ei is None or h_E_ei.shape[0] == 0:
        raise ContractError("gate_weight needs at least one text row and one entity row")
    h_te = concat([h_T_ti.mean(axis=0), h_E_ei.mean(axis=0)], axis=0).reshape(1, -1)
    hidden = nn.linear(h_te, gate.W1, gate.b1).relu()
    return nn.linear(hidden, gate.W2, gate.b2).sigmoid().reshape(1)


def fuse_images(h_V_ti: Tensor, h_V_ei: Tensor, w_te) -> Tensor:
    """Convex combination ``w * h_V_ti + (1 - w) * h_V_ei``."""
    if h_V_ti.shape != h_V_ei.shape:
        raise ContractError(f"fuse_images shape mismatch: {h_V_ti.shape} vs {h_V_ei.shape}")
    w = as_tensor(w_te)
    return h_V_ti * w + h_V_ei * (1.0 - w)


def decoder_memory(h_T_ti: Tensor, h_V_comb: Tensor) -> Tensor:
    """Position-axis concatenation the decoder cross-attends over."""
    if h_V_comb.shape[0] == 0:
        return h_T_ti
    return concat([h_T_ti, h_V_comb], axis=0)


def decoder_logits(model: MultimodalSummarizer, memory: Tensor, input_ids: Sequence[int]) -> Tensor:
    """Next-token logits for every input position; output projection tied to ``W_t``."""
    cfg = model.config
    p = model.params
    n = len(input_ids)
    if n > p["dec.pos"].shape[0]:
        raise ContractError(f"decoder input of {n} tokens exceeds {p['dec.pos'].shape[0]} positions")
    x = embedding(p["enc.W_t"], input_ids) + p["dec.pos"][:n]
    for i in range(cfg.dec_layers):
        x = nn.decoder_layer(p, f"dec.layers.{i}", x, memory, cfg.n_heads, cfg.ln_eps)
    x = nn.ln(p, "dec.ln_out", x, cfg.ln_eps)
    return x @ p["enc.W_t"].T + p["dec.out_bias"]


def summarization_loss(model: MultimodalSummarizer, memory: Tensor, target: Sequence[int], reduction: str = "sum") -> Tensor:
    """Teacher-forced negative log-likelihood of ``target`` followed by EOS.

    The decoder input is ``[BOS] + target``; ``reduction="mean"`` divides by
    the number of predicted positions (``len(target) + 1``).
    """
    target = list(target)
    if not target:
        raise ContractError("summarization_loss needs a non-empty target")
    if len(target) > model.config.max_summary_len:
        raise ContractError(f"target of {len(target)} tokens exceeds max_summary_len={model.config.max_summary_len}")
    logits = decoder_logits(model, memory, [BOS] + target)
    return cross_entropy(logits, target + [EOS], reduction=reduction)


def next_token_logprobs(model: MultimodalSummarizer, memory: Tensor, prefix: Sequence[int]) -> np.ndarray:
    with no_grad():
        logits = decoder_logits(model, memory, [BOS] + list(prefix))
        return log_softmax(logits[-1:], axis=-1).data[0]


def greedy_decode(model: MultimodalSummarizer, memory: Tensor, max_len: int | None = None) -> list[int]:
    """Argmax decoding; ties go to the lowest token id."""
    max_len = model.config.max_summary_len if max_len is None else max_len
    out: list[int] = []
    while len(out) < max_len:
        tok = int(np.argmax(next_token_logprobs(model, memory, out)))
        if tok == EOS:
            break
        out.append(tok)
    return out


def beam_search(model: MultimodalSummarizer, memory: Tensor, beam_size: int = 5, max_len: int | None = None) -> list[int]:
    """Length-normalized beam search (score = log-prob / length).

    Length counts emitted tokens plus the EOS when one was produced. Hypotheses
    reaching ``max_len`` tokens finish without EOS. Ranking ties go to the lower
    token id, then to the earlier-ranked parent; among finished hypotheses an
    earlier completion wins ties.
    """
    if beam_size < 1:
        raise ContractError("beam_size must be >= 1")
    max_len = model.config.max_summary_len if max_len is None else max_len
    alive: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[tuple[float, int, list[int]]] = []  # (normalized score, order, tokens)
    order = 0
    if max_len == 0:
        return []
    while alive and len(finished) < beam_size:
        cands = []
        for b, (toks, score) in enumerate(alive):
            lp = next_token_logprobs(model, memory, toks)
            for v in range(lp.shape[0]):
                cands.append((-(score + lp[v]), v, b))
        cands.sort()
        nxt = []
        for neg, v, b in cands[:beam_size]:
            toks = alive[b][0]
            score = -neg
            if v == EOS:
                finished.append((score / (len(toks) + 1), order, toks))
                order += 1
            elif len(toks) + 1 >= max_len:
                finished.append((score / (len(toks) + 1), order, toks + [v]))
                order += 1
            else:
                nxt.append((toks + [v], score))
        alive = nxt
    best = min(finished, key=lambda f: (-f[0], f[1]))
    return best[2]
