"""Generating multimodal summaries and scoring them against references."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .autograd import no_grad
from .corpus import Document
from .encoder import encode_document
from .fusion_decoder import beam_search, decoder_memory, fuse_images
from .image_selection import score_images, select_image
from .metrics import EvalReport, corpus_report, mean_report
from .model import MultimodalSummarizer, resolve_gate


@dataclass
class MultimodalSummary:
    doc_id: str
    tokens: list[int]
    image_index: int | None
    w_te: float


def summarize_document(model: MultimodalSummarizer, doc: Document, beam_size: int = 5, gate_mode: str = "learned",
                       max_len: int | None = None) -> MultimodalSummary:
    with no_grad():
        enc = encode_document(model, doc)
        w = resolve_gate(model, enc, gate_mode)
        memory = decoder_memory(enc.h_T_ti, fuse_images(enc.h_V_ti, enc.h_V_ei, w))
        tokens = beam_search(model, memory, beam_size, max_len)
        image = None
        if doc.n_images:
            scores = score_images(enc.cls_ti, enc.cls_ei, w, model.score_head("ti"), model.score_head("ei"))
            image = select_image(scores)
    return MultimodalSummary(doc.id, tokens, image, float(w.item()))


def evaluate(model: MultimodalSummarizer, docs: Sequence[Document], beam_size: int = 5, gate_mode: str = "learned",
             max_len: int | None = None) -> tuple[EvalReport, list[MultimodalSummary]]:
    outs = [summarize_document(model, d, beam_size, gate_mode, max_len) for d in docs]
    report = corpus_report(
        [o.tokens for o in outs],
        [d.reference_summary for d in docs],
        [o.image_index for o in outs],
        [d.reference_images for d in docs],
    )
    return report, outs


def evaluate_checkpoints(models: Sequence[MultimodalSummarizer], docs: Sequence[Document], beam_size: int = 5,
                         gate_mode: str = "learned") -> EvalReport:
    """Evaluate each retained checkpoint and average the metrics (not the weights)."""
    return mean_report([evaluate(m, docs, beam_size, gate_mode)[0] for m in models])
