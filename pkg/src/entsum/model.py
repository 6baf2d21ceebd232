"""Model configuration, parameter store and the full per-document forward pass."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from typing import Iterator

import numpy as np

from . import nn
from .autograd import Tensor, parameter
from .corpus import Document
from .encoder import EncoderOutput, encode_document
from .fusion_decoder import GateParams, decoder_memory, fuse_images, gate_weight, summarization_loss
from .image_selection import ScoreHead, kd_loss, score_images

GATE_MODES = ("learned", "one", "zero")


@dataclass
class ModelConfig:
    vocab_size: int
    n_entities: int
    d_q: int = 32
    n_queries: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    enc_layers: int = 2
    dec_layers: int = 2
    entity_dim: int = 32
    gate_hidden: int | None = None  # defaults to d_model
    score_hidden: int | None = None  # defaults to d_model
    max_context: int = 1024
    max_images: int = 8
    max_summary_len: int = 16
    init_std: float = 0.02
    ln_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.gate_hidden is None:
            self.gate_hidden = self.d_model
        if self.score_hidden is None:
            self.score_hidden = self.d_model

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> ModelConfig:
        raw = json.loads(text)
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in raw.items() if k in names})

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    d, q = cfg.d_model, cfg.n_queries
    shapes: dict[str, tuple] = {
        "enc.W_t": (cfg.vocab_size, d),
        "enc.W_v": (cfg.d_q, d),
        "enc.W_e1": (cfg.n_entities, cfg.entity_dim),
        "enc.W_e2": (cfg.entity_dim, d),
        "enc.v_cls": (d,),
        "enc.k_cls": (cfg.entity_dim,),
        "enc.intra_pos": (q + 1, d),
        "enc.multi_pos": (cfg.max_context, d),
    }
    for i in range(cfg.enc_layers):
        shapes.update(nn.encoder_layer_shapes(f"enc.layers.{i}", d, cfg.d_ff))
    shapes.update(nn.ln_shapes("enc.ln_out", d))
    shapes["dec.pos"] = (cfg.max_summary_len + 2, d)
    for i in range(cfg.dec_layers):
        shapes.update(nn.decoder_layer_shapes(f"dec.layers.{i}", d, cfg.d_ff))
    shapes.update(nn.ln_shapes("dec.ln_out", d))
    shapes["dec.out_bias"] = (cfg.vocab_size,)
    shapes.update({"gate.W1": (2 * d, cfg.gate_hidden), "gate.b1": (cfg.gate_hidden,),
                   "gate.W2": (cfg.gate_hidden, 1), "gate.b2": (1,)})
    for head in ("ti", "ei"):
        h = cfg.score_hidden
        shapes.update({f"score.{head}.W1": (d, h), f"score.{head}.b1": (h,),
                       f"score.{head}.W2": (h, 1), f"score.{head}.b2": (1,)})
    return shapes


def _is_zero_init(name: str) -> bool:
    leaf = name.rsplit(".", 1)[-1]
    return leaf.endswith("_b") or leaf in ("b", "b1", "b2", "out_bias")


class MultimodalSummarizer:
    """All learnable arrays of the model, keyed by checkpoint name.

    Both encoder passes read the same ``enc.layers.*`` entries; there is no
    second copy.
    """

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config: ModelConfig, entity_table: np.ndarray | None = None) -> MultimodalSummarizer:
        """Seeded init. ``entity_table`` (|E| x entity_dim, e.g. TransE output) seeds W_e1."""
        rng = np.random.default_rng(config.seed)
        params = {}
        for name, shape in parameter_shapes(config).items():
            leaf = name.rsplit(".", 1)[-1]
            if leaf == "g":
                arr = np.ones(shape)
            elif _is_zero_init(name):
                arr = np.zeros(shape)
            else:
                arr = rng.normal(0.0, config.init_std, size=shape)
            params[name] = parameter(arr, name=name)
        if entity_table is not None:
            if entity_table.shape != params["enc.W_e1"].shape:
                raise ValueError(f"entity table shape {entity_table.shape} != {params['enc.W_e1'].shape}")
            params["enc.W_e1"].data = np.array(entity_table, dtype=np.float64)
        else:
            w = rng.normal(size=params["enc.W_e1"].shape)
            params["enc.W_e1"].data = w / np.linalg.norm(w, axis=1, keepdims=True)
        return cls(config, params)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def tensors(self, names=None) -> list[Tensor]:
        return [self.params[n] for n in (names if names is not None else self.params)]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        for n, t in self.params.items():
            t.data = np.array(arrays[n], dtype=np.float64)

    @classmethod
    def from_state(cls, config: ModelConfig, arrays: dict[str, np.ndarray]) -> MultimodalSummarizer:
        return cls(config, {n: parameter(np.array(a, dtype=np.float64), name=n) for n, a in arrays.items()})

    def copy(self) -> MultimodalSummarizer:
        return MultimodalSummarizer.from_state(self.config, self.state_dict())

    def set_trainable(self, names) -> None:
        keep = set(names)
        for n, t in self.params.items():
            t.requires_grad = n in keep

    def gate_params(self) -> GateParams:
        p = self.params
        return GateParams(p["gate.W1"], p["gate.b1"], p["gate.W2"], p["gate.b2"])

    def score_head(self, which: str) -> ScoreHead:
        p = self.params
        return ScoreHead(p[f"score.{which}.W1"], p[f"score.{which}.b1"], p[f"score.{which}.W2"], p[f"score.{which}.b2"])

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)


@dataclass
class ForwardResult:
    enc: EncoderOutput
    w_te: Tensor
    memory: Tensor
    scores: Tensor | None  # per-image g(p)
    loss_sum: Tensor
    loss_is: Tensor | None
    total: Tensor


def resolve_gate(model: MultimodalSummarizer, enc: EncoderOutput, gate_mode: str = "learned") -> Tensor:
    if gate_mode == "learned":
        return gate_weight(enc.h_T_ti, enc.h_E_ei, model.gate_params())
    if gate_mode == "one":
        return Tensor(np.ones(1))
    if gate_mode == "zero":
        return Tensor(np.zeros(1))
    raise ValueError(f"unknown gate mode {gate_mode!r}; expected one of {GATE_MODES}")


def forward_document(
    model: MultimodalSummarizer,
    doc: Document,
    teacher_scores: np.ndarray | None = None,
    *,
    alpha: float = 1.0,
    tau: float = 1.0,
    gate_mode: str = "learned",
    reduction: str = "sum",
) -> ForwardResult:
    """Both encoder passes, gate, fusion, decoder loss and (optionally) distillation.

    ``total = alpha * L_IS + L_Sum``; the image-selection term is dropped when
    the document has no images or no teacher scores are given.
    """
    enc = encode_document(model, doc)
    w = resolve_gate(model, enc, gate_mode)
    h_comb = fuse_images(enc.h_V_ti, enc.h_V_ei, w)
    memory = decoder_memory(enc.h_T_ti, h_comb)
    l_sum = summarization_loss(model, memory, doc.reference_summary, reduction=reduction)
    scores = l_is = None
    if doc.n_images:
        scores = score_images(enc.cls_ti, enc.cls_ei, w, model.score_head("ti"), model.score_head("ei"))
        if teacher_scores is not None:
            l_is = kd_loss(scores, teacher_scores, tau)
    total = l_sum if l_is is None or alpha == 0 else l_is * alpha + l_sum
    return ForwardResult(enc, w, memory, scores, l_sum, l_is, total)


def modal_matching_loss(model: MultimodalSummarizer, doc: Document, reduction: str = "sum") -> Tensor:
    """Text-image pass only: decode from ``[h_T_ti, h_V_ti]``."""
    enc = encode_document(model, doc, entity_pass=False)
    return summarization_loss(model, decoder_memory(enc.h_T_ti, enc.h_V_ti), doc.reference_summary, reduction=reduction)
