"""Entity-aware multimodal summarization on small synthetic corpora.

Numpy-only autograd, a synthetic multimodal corpus generator, a dual-pass
transformer encoder with a gated image fusion, a beam-search decoder, an
image selector trained by distillation and ROUGE / image-precision metrics.
"""

from __future__ import annotations

from .corpus import ContractError, CorpusConfig, Document, LoadError, generate_corpus, load_msmo_jsonl
from .inference import evaluate, summarize_document
from .metrics import EvalReport
from .model import MultimodalSummarizer, ModelConfig
from .pipeline import PipelineConfig, run_pipeline
from .training import TrainConfig, finetune_stage, load_checkpoint, modal_matching_stage, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "CorpusConfig",
    "Document",
    "MultimodalSummarizer",
    "EvalReport",
    "LoadError",
    "ModelConfig",
    "PipelineConfig",
    "TrainConfig",
    "evaluate",
    "finetune_stage",
    "generate_corpus",
    "load_checkpoint",
    "load_msmo_jsonl",
    "modal_matching_stage",
    "run_pipeline",
    "save_checkpoint",
    "summarize_document",
]
