"""End-to-end run: corpus -> TransE -> modal matching -> fine-tuning -> evaluation.

The report is the per-metric mean over the retained checkpoints.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .corpus import Corpus, CorpusConfig, generate_corpus
from .image_selection import ToyTeacher
from .inference import evaluate_checkpoints
from .metrics import EvalReport
from .model import MultimodalSummarizer, ModelConfig
from .training import Checkpoint, TrainConfig, TrainingLog, finetune_stage, modal_matching_stage
from .transe import train_transe


@dataclass
class PipelineConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    enc_layers: int = 2
    dec_layers: int = 2
    entity_dim: int = 32
    transe_epochs: int = 200
    transe_margin: float = 1.0
    transe_lr: float = 0.01
    stage1: TrainConfig = field(default_factory=lambda: TrainConfig(stage="modal_matching", epochs=50))
    stage2: TrainConfig = field(default_factory=lambda: TrainConfig(stage="finetune", epochs=200))
    beam_size: int = 5
    seed: int = 0

    def model_config(self, corpus: Corpus) -> ModelConfig:
        c = self.corpus
        return ModelConfig(
            vocab_size=len(corpus.vocab), n_entities=len(corpus.lexicon), d_q=c.d_q, n_queries=c.n_queries,
            d_model=self.d_model, n_heads=self.n_heads, d_ff=self.d_ff, enc_layers=self.enc_layers,
            dec_layers=self.dec_layers, entity_dim=self.entity_dim, max_context=c.max_context,
            max_images=c.max_images, max_summary_len=c.max_summary_len, seed=self.seed,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PipelineResult:
    corpus: Corpus
    model: MultimodalSummarizer
    checkpoints: list[Checkpoint]
    log: TrainingLog
    report: EvalReport


def run_pipeline(cfg: PipelineConfig, skip_stage1: bool = False) -> PipelineResult:
    corpus = generate_corpus(cfg.corpus)
    emb = train_transe(corpus.triples, dim=cfg.entity_dim, epochs=cfg.transe_epochs,
                       margin=cfg.transe_margin, lr=cfg.transe_lr, seed=cfg.seed)
    model = MultimodalSummarizer.initialize(cfg.model_config(corpus), emb.entity)
    teacher = ToyTeacher.from_world(corpus.world, len(corpus.vocab))
    log = TrainingLog()
    if not skip_stage1:
        modal_matching_stage(model, corpus.documents, cfg.stage1, log)
    model, checkpoints = finetune_stage(model, corpus.documents, cfg.stage2, teacher, log=log)
    retained = [MultimodalSummarizer.from_state(model.config, c.state) for c in checkpoints]
    report = evaluate_checkpoints(retained, corpus.documents, cfg.beam_size, cfg.stage2.gate_mode)
    return PipelineResult(corpus, model, checkpoints, log, report)
