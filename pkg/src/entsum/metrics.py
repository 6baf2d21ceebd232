"""ROUGE-1/2/L F1 over token sequences and image precision."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .corpus import ContractError


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _f1(overlap: float, n_hyp: int, n_ref: int) -> float:
    if n_hyp == 0 or n_ref == 0 or overlap == 0:
        return 0.0
    p, r = overlap / n_hyp, overlap / n_ref
    return 2 * p * r / (p + r)


def rouge_n(hypothesis: Sequence, reference: Sequence, n: int = 1) -> float:
    """F1 of clipped n-gram overlap."""
    if n < 1:
        raise ValueError("n must be >= 1")
    hyp, ref = _ngrams(list(hypothesis), n), _ngrams(list(reference), n)
    overlap = sum((hyp & ref).values())
    return _f1(overlap, sum(hyp.values()), sum(ref.values()))


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(hypothesis: Sequence, reference: Sequence) -> float:
    """Summary-level LCS F1 (one LCS over the whole sequences)."""
    return _f1(lcs_length(list(hypothesis), list(reference)), len(hypothesis), len(reference))


def image_precision(recommended: Iterable[int], reference: Iterable[int]) -> float:
    rec, ref = set(recommended), set(reference)
    if not rec:
        raise ContractError("image_precision needs at least one recommended image")
    return len(rec & ref) / len(rec)


@dataclass
class EvalReport:
    rouge1_f: float
    rouge2_f: float
    rougeL_f: float
    image_precision: float
    n_documents: int

    def __post_init__(self):
        for name in ("rouge1_f", "rouge2_f", "rougeL_f", "image_precision"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def to_text(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in asdict(self).items()) + "\n"

    @classmethod
    def from_text(cls, text: str) -> EvalReport:
        raw = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        return cls(float(raw["rouge1_f"]), float(raw["rouge2_f"]), float(raw["rougeL_f"]),
                   float(raw["image_precision"]), int(raw["n_documents"]))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> EvalReport:
        return cls(**json.loads(text))


def corpus_report(
    hypotheses: Sequence[Sequence],
    references: Sequence[Sequence],
    selected: Sequence[int | None] = (),
    reference_images: Sequence[Sequence[int] | None] = (),
) -> EvalReport:
    """Mean per-document scores. IP averages over documents that carry reference images."""
    n = len(hypotheses)
    if n == 0 or n != len(references):
        raise ContractError("corpus_report needs equal, non-zero numbers of hypotheses and references")
    r1 = sum(rouge_n(h, r, 1) for h, r in zip(hypotheses, references)) / n
    r2 = sum(rouge_n(h, r, 2) for h, r in zip(hypotheses, references)) / n
    rl = sum(rouge_l(h, r) for h, r in zip(hypotheses, references)) / n
    ips = [image_precision([s], ref) for s, ref in zip(selected, reference_images) if s is not None and ref is not None]
    ip = sum(ips) / len(ips) if ips else 0.0
    return EvalReport(r1, r2, rl, ip, n)


def mean_report(reports: Sequence[EvalReport]) -> EvalReport:
    """Per-metric mean over several reports (e.g. the retained checkpoints)."""
    if not reports:
        raise ContractError("mean_report needs at least one report")
    k = len(reports)
    return EvalReport(
        sum(r.rouge1_f for r in reports) / k,
        sum(r.rouge2_f for r in reports) / k,
        sum(r.rougeL_f for r in reports) / k,
        sum(r.image_precision for r in reports) / k,
        reports[0].n_documents,
    )
