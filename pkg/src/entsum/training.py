"""Two-stage optimization, checkpoint retention and checkpoint files."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from .arrayfile import ArrayFileError, load_arrays, save_arrays
from .autograd import Tensor, grad, no_grad, parameter
from .corpus import ContractError, Document
from .image_selection import Teacher, teacher_similarity
from .model import MultimodalSummarizer, GATE_MODES, ModelConfig, forward_document, modal_matching_loss, parameter_shapes
from .optim import AdamState, adam_step

STAGES = ("modal_matching", "finetune")
MODAL_MATCHING_PARAMS = ("enc.W_v", "enc.v_cls")
_META = "__meta__"


class NonFiniteError(RuntimeError):
    """Training produced a NaN or infinity."""


class CheckpointError(ValueError):
    """A checkpoint file is unreadable or does not fit the requested model."""


@dataclass
class TrainConfig:
    stage: str = "finetune"
    alpha: float = 1.0
    tau: float = 1.0
    learning_rate: float = 3e-4
    batch_size: int = 4
    epochs: int = 1
    n_subsets: int = 1
    top_k_checkpoints: int = 3
    gate_mode: str = "learned"
    loss_reduction: str = "sum"
    seed: int = 0

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ContractError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.alpha < 0:
            raise ContractError("alpha must be >= 0")
        if self.tau <= 0:
            raise ContractError("tau must be > 0")
        if self.n_subsets < 1 or self.top_k_checkpoints < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ContractError("n_subsets, top_k_checkpoints, batch_size must be >= 1 and epochs >= 0")
        if self.gate_mode not in GATE_MODES:
            raise ContractError(f"gate_mode must be one of {GATE_MODES}")
        if self.loss_reduction not in ("sum", "mean"):
            raise ContractError("loss_reduction must be 'sum' or 'mean'")


@dataclass
class LogRecord:
    stage: str
    step: int
    epoch: int
    loss_sum: float
    loss_is: float | None = None
    w_te: float | None = None
    val_loss: float | None = None

    def line(self) -> str:
        def fmt(v):
            return "-" if v is None else repr(v)

        return (f"stage={self.stage} step={self.step} epoch={self.epoch} L_sum={fmt(self.loss_sum)} "
                f"L_is={fmt(self.loss_is)} w_te={fmt(self.w_te)} val_loss={fmt(self.val_loss)}")


@dataclass
class TrainingLog:
    records: list[LogRecord] = field(default_factory=list)
    stream: TextIO | None = None

    def add(self, rec: LogRecord) -> None:
        self.records.append(rec)
        if self.stream is not None:
            self.stream.write(rec.line() + "\n")

    def epoch_means(self, stage: str) -> list[float]:
        """Mean batch L_Sum per epoch for ``stage``."""
        by_epoch: dict[int, list[float]] = {}
        for r in self.records:
            if r.stage == stage and r.val_loss is None:
                by_epoch.setdefault(r.epoch, []).append(r.loss_sum)
        return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


@dataclass
class Checkpoint:
    index: int  # subset number, 0-based
    epoch: int  # global epoch count when saved
    val_loss: float
    state: dict[str, np.ndarray]


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def _check_finite(named: dict[str, np.ndarray], what: str, model: MultimodalSummarizer | None = None) -> None:
    for name, arr in named.items():
        if not np.all(np.isfinite(arr)):
            msg = f"non-finite {what}: {name}"
            if model is not None:
                bad = next((n for n in model.names() if not np.all(np.isfinite(model[n].data))), None)
                if bad is not None:
                    msg += f" (first non-finite parameter: {bad})"
            raise NonFiniteError(msg)


def modal_matching_stage(model: MultimodalSummarizer, docs: Sequence[Document], config: TrainConfig,
                         log: TrainingLog | None = None) -> MultimodalSummarizer:
    """Train only ``W_v`` and ``v_CLS`` on the text-image decoding loss.

    Every other array is left bitwise untouched.
    """
    if config.stage != "modal_matching":
        raise ContractError(f"modal_matching_stage called with stage={config.stage!r}")
    log = log if log is not None else TrainingLog()
    names = list(MODAL_MATCHING_PARAMS)
    params = model.tensors(names)
    state = AdamState.for_params(params, learning_rate=config.learning_rate)
    rng = np.random.default_rng([config.seed, 1])
    step = 0
    model.set_trainable(names)
    try:
        for epoch in range(config.epochs):
            for batch in _batches(len(docs), config.batch_size, rng):
                losses = [modal_matching_loss(model, docs[i], config.loss_reduction) for i in batch]
                loss = _mean(losses)
                _check_finite({"L_Sum": loss.data}, f"modal-matching loss at step {step}", model)
                grads = grad(loss, params)
                _check_finite(dict(zip(names, grads)), "gradient")
                adam_step(params, grads, state)
                step += 1
                log.add(LogRecord("modal_matching", step, epoch, loss.item()))
    finally:
        model.set_trainable(model.names())
    return model


def _mean(losses: list[Tensor]) -> Tensor:
    total = losses[0]
    for l in losses[1:]:
        total = total + l
    return total * (1.0 / len(losses))


def teacher_table(docs: Sequence[Document], teacher: Teacher | None) -> list[np.ndarray | None]:
    """Teacher scores per document against its reference summary."""
    if teacher is None:
        return [None] * len(docs)
    return [teacher_similarity(d.reference_summary, d.images, teacher) if d.n_images else None for d in docs]


def validation_loss(model: MultimodalSummarizer, docs: Sequence[Document], teacher_scores: Sequence[np.ndarray | None],
                    config: TrainConfig) -> float:
    """Mean ``alpha * L_IS + L_Sum`` over ``docs`` without recording a graph."""
    if not docs:
        return float("nan")
    with no_grad():
        vals = [
            forward_document(model, d, s, alpha=config.alpha, tau=config.tau, gate_mode=config.gate_mode,
                             reduction=config.loss_reduction).total.item()
            for d, s in zip(docs, teacher_scores)
        ]
    return float(np.mean(vals))


def retain_top_k(checkpoints: list[Checkpoint], k: int) -> list[Checkpoint]:
    """Lowest validation loss first; earlier checkpoint wins ties."""
    return sorted(checkpoints, key=lambda c: (c.val_loss, c.index))[:k]


def finetune_stage(
    model: MultimodalSummarizer,
    docs: Sequence[Document],
    config: TrainConfig,
    teacher: Teacher | None = None,
    valid_docs: Sequence[Document] | None = None,
    log: TrainingLog | None = None,
) -> tuple[MultimodalSummarizer, list[Checkpoint]]:
    """Train every parameter on ``alpha * L_IS + L_Sum`` over successive subsets.

    The training set is cut into ``n_subsets`` contiguous parts trained in
    order, each for ``epochs`` epochs, continuing from the previous weights.
    After each part the model is checkpointed with its validation loss
    (training documents stand in when ``valid_docs`` is empty) and only the
    ``top_k_checkpoints`` best are kept.
    """
    if config.stage != "finetune":
        raise ContractError(f"finetune_stage called with stage={config.stage!r}")
    log = log if log is not None else TrainingLog()
    valid = list(valid_docs) if valid_docs else list(docs)
    scores = teacher_table(docs, teacher)
    val_scores = teacher_table(valid, teacher)
    names = model.names()
    model.set_trainable(names)
    params = model.tensors(names)
    state = AdamState.for_params(params, learning_rate=config.learning_rate)
    rng = np.random.default_rng([config.seed, 2])
    subsets = np.array_split(np.arange(len(docs)), config.n_subsets)
    kept: list[Checkpoint] = []
    step = epoch_count = 0
    for s, subset in enumerate(subsets):
        for _ in range(config.epochs):
            for batch in _batches(len(subset), config.batch_size, rng):
                idx = subset[batch]
                results = [
                    forward_document(model, docs[i], scores[i], alpha=config.alpha, tau=config.tau,
                                     gate_mode=config.gate_mode, reduction=config.loss_reduction)
                    for i in idx
                ]
                for i, r in zip(idx, results):
                    parts = {"L_Sum": r.loss_sum.data}
                    if r.loss_is is not None:
                        parts["L_IS"] = r.loss_is.data
                    _check_finite(parts, f"loss in {docs[i].id}", model)
                loss = _mean([r.total for r in results])
                grads = grad(loss, params)
                _check_finite(dict(zip(names, grads)), "gradient")
                adam_step(params, grads, state)
                _check_finite({n: p.data for n, p in zip(names, params)}, "parameter")
                step += 1
                l_is = [r.loss_is.item() for r in results if r.loss_is is not None]
                log.add(LogRecord(
                    "finetune", step, epoch_count,
                    float(np.mean([r.loss_sum.item() for r in results])),
                    float(np.mean(l_is)) if l_is else None,
                    float(np.mean([r.w_te.item() for r in results])),
                ))
            epoch_count += 1
        if len(subset) == 0:
            continue
        vl = validation_loss(model, valid, val_scores, config)
        log.add(LogRecord("finetune", step, epoch_count - 1, float("nan"), val_loss=vl))
        kept = retain_top_k(kept + [Checkpoint(s, epoch_count, vl, model.state_dict())], config.top_k_checkpoints)
    return model, kept


# -- checkpoint files -------------------------------------------------------------------------


def save_checkpoint(model: MultimodalSummarizer, path, seed: int | None = None, extra: dict | None = None) -> None:
    """Write every parameter plus a JSON metadata block (config, fingerprint, seed)."""
    meta = {"config": json.loads(model.config.to_json()), "fingerprint": model.config.fingerprint(),
            "seed": model.config.seed if seed is None else seed}
    if extra:
        meta["extra"] = extra
    arrays: dict[str, np.ndarray] = {_META: np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    arrays.update(model.state_dict())
    save_arrays(path, arrays)


def read_checkpoint_meta(path) -> dict:
    arrays = _read(path)
    return _meta(arrays)


def _read(path) -> dict[str, np.ndarray]:
    try:
        return load_arrays(path)
    except ArrayFileError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc


def _meta(arrays: dict[str, np.ndarray]) -> dict:
    if _META not in arrays:
        raise CheckpointError(f"checkpoint has no {_META} block")
    return json.loads(arrays[_META].tobytes().decode())


def load_checkpoint(path, config: ModelConfig | None = None) -> MultimodalSummarizer:
    """Rebuild a model from ``path``; nothing is returned unless every array fits.

    ``config`` defaults to the one stored in the file. Missing arrays and
    shape conflicts raise :class:`CheckpointError` naming the array.
    """
    arrays = _read(path)
    meta = _meta(arrays)
    cfg = config if config is not None else ModelConfig(**meta["config"])
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name not in arrays:
            raise CheckpointError(f"checkpoint missing array {name!r}")
        if arrays[name].shape != shape:
            raise CheckpointError(
                f"shape conflict for {name!r}: checkpoint has {arrays[name].shape}, model expects {shape}"
            )
        params[name] = parameter(arrays[name].astype(np.float64), name=name)
    return MultimodalSummarizer(cfg, params)


def train_config_from_mapping(raw: dict, **overrides) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    kwargs = {k: v for k, v in raw.items() if k in names}
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


def write_checkpoints(model: MultimodalSummarizer, checkpoints: Sequence[Checkpoint], out_dir) -> list[Path]:
    """Save retained checkpoints as ``ckpt_subsetNN.nar`` in validation-loss order."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in checkpoints:
        m = MultimodalSummarizer.from_state(model.config, c.state)
        p = out / f"ckpt_subset{c.index:02d}.nar"
        save_checkpoint(m, p, extra={"val_loss": c.val_loss, "subset": c.index, "epoch": c.epoch})
        paths.append(p)
    return paths
