"""Image scoring heads, teachers and the temperature-softmax distillation loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from . import nn
from .arrayfile import load_arrays, save_arrays
from .autograd import Tensor, as_tensor, log_softmax
from .corpus import ContractError, World


@dataclass
class ScoreHead:
    W1: Tensor  # (d, h)
    b1: Tensor
    W2: Tensor  # (h, 1)
    b2: Tensor


def head_scores(cls: Tensor, head: ScoreHead) -> Tensor:
    """Two-layer ReLU MLP from (M, d) CLS states to (M,) scores."""
    hidden = nn.linear(cls, head.W1, head.b1).relu()
    return nn.linear(hidden, head.W2, head.b2).reshape(cls.shape[0])


def combine_scores(g_ti, g_ei, w_te) -> Tensor:
    w = as_tensor(w_te)
    return as_tensor(g_ti) * w + as_tensor(g_ei) * (1.0 - w)


def score_images(cls_ti: Tensor, cls_ei: Tensor, w_te, head_ti: ScoreHead, head_ei: ScoreHead) -> Tensor:
    """Per-image ``g(p) = w * g_ti(p) + (1 - w) * g_ei(p)`` with the fusion gate's ``w``."""
    if cls_ti.shape[0] == 0:
        raise ContractError("score_images needs at least one image")
    if cls_ei is None or cls_ei.shape != cls_ti.shape:
        raise ContractError("score_images needs CLS states from both encoder passes")
    return combine_scores(head_scores(cls_ti, head_ti), head_scores(cls_ei, head_ei), w_te)


def select_image(scores) -> int:
    """Index of the highest score; the lowest index wins ties."""
    arr = np.asarray(scores.data if isinstance(scores, Tensor) else scores, dtype=np.float64)
    if arr.size == 0:
        raise ContractError("select_image needs at least one score")
    return int(np.argmax(arr))


def kd_loss(student_scores, teacher_scores, tau: float = 1.0) -> Tensor:
    """``KL(P || Q)`` with ``P = softmax(g / tau)``, ``Q = softmax(l / tau)``.

    Gradients reach the student scores only.
    """
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    g = as_tensor(student_scores)
    l = np.asarray(teacher_scores.data if isinstance(teacher_scores, Tensor) else teacher_scores, dtype=np.float64)
    if g.shape != l.shape:
        raise ContractError(f"student scores {g.shape} vs teacher scores {l.shape}")
    log_p = log_softmax(g * (1.0 / tau), axis=-1)
    z = l / tau
    z = z - z.max()
    log_q = z - np.log(np.exp(z).sum())
    return (log_p.exp() * (log_p - log_q)).sum().reshape(1)


# -- teachers --------------------------------------------------------------------------------


class Teacher(Protocol):
    def __call__(self, summary_tokens: Sequence[int], image_features: np.ndarray) -> np.ndarray: ...


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; 0 when either vector has zero norm."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


class ToyTeacher:
    """Frozen stand-in for a vision-language scorer.

    Text vector: mean of ``token_table`` rows over the summary tokens.
    Image vector: ``image_proj`` applied to the image's mean query feature.
    Score: cosine of the two.
    """

    def __init__(self, token_table: np.ndarray, image_proj: np.ndarray):
        self.token_table = np.asarray(token_table, dtype=np.float64)
        self.image_proj = np.asarray(image_proj, dtype=np.float64)  # (k, d_Q)
        if self.token_table.shape[1] != self.image_proj.shape[0]:
            raise ContractError("teacher text and image spaces differ in width")

    def __call__(self, summary_tokens: Sequence[int], image_features: np.ndarray) -> np.ndarray:
        feats = np.asarray(image_features, dtype=np.float64)
        if feats.size == 0:
            return np.zeros(0)
        ids = np.asarray(list(summary_tokens), dtype=np.int64)
        text = self.token_table[ids].mean(axis=0) if ids.size else np.zeros(self.token_table.shape[1])
        images = feats.mean(axis=1) @ self.image_proj.T  # (M, k)
        return np.array([cosine(text, v) for v in images])

    @classmethod
    def from_world(cls, world: World, vocab_size: int) -> ToyTeacher:
        """Tables aligned with a synthetic corpus's hidden entity concepts.

        Entity words map to their entity's latent vector; every other token
        maps to zero. The image projection inverts the mean query map.
        """
        k = world.latent.shape[1]
        table = np.zeros((vocab_size, k))
        counts = np.zeros(vocab_size)
        for eid, words in enumerate(world.entity_words):
            for w in words:
                table[w] += world.latent[eid]
                counts[w] += 1
        table[counts > 0] /= counts[counts > 0, None]
        proj = np.linalg.pinv(world.feature_maps.mean(axis=0))  # (k, d_Q)
        return cls(table, proj)

    @classmethod
    def seeded(cls, vocab_size: int, d_q: int, dim: int = 16, seed: int = 0) -> ToyTeacher:
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((vocab_size, dim)), rng.standard_normal((dim, d_q)) / np.sqrt(d_q))

    def save(self, path) -> None:
        save_arrays(path, {"token_table": self.token_table, "image_proj": self.image_proj})

    @classmethod
    def load(cls, path) -> ToyTeacher:
        arrays = load_arrays(path)
        return cls(arrays["token_table"], arrays["image_proj"])


TEACHERS: dict[str, Callable[..., Teacher]] = {"toy": ToyTeacher.load}


def register_teacher(name: str, factory: Callable[..., Teacher]) -> None:
    TEACHERS[name] = factory


def teacher_similarity(summary_tokens: Sequence[int], image_features: np.ndarray, teacher: Teacher) -> np.ndarray:
    """Per-image teacher scores, checked finite and one per image."""
    scores = np.asarray(teacher(summary_tokens, image_features), dtype=np.float64)
    m = np.asarray(image_features).shape[0] if np.asarray(image_features).size else 0
    if scores.shape != (m,):
        raise ContractError(f"teacher returned shape {scores.shape}, expected ({m},)")
    if not np.all(np.isfinite(scores)):
        raise ContractError("teacher returned non-finite scores")
    return scores
