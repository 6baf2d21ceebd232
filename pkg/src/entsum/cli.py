"""Command-line entry points: gen-data, train-transe, train, evaluate, summarize.

Exit codes: 0 success, 1 usage error, 2 data or contract error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from .arrayfile import ArrayFileError, load_arrays, save_arrays
from .corpus import (
    ContractError,
    CorpusConfig,
    EntityLexicon,
    LoadError,
    TripleStore,
    Vocab,
    generate_corpus,
    load_msmo_jsonl,
    save_jsonl,
)
from .image_selection import TEACHERS, ToyTeacher
from .inference import evaluate, summarize_document
from .metrics import mean_report
from .model import GATE_MODES, MultimodalSummarizer, ModelConfig
from .training import (
    CheckpointError,
    NonFiniteError,
    TrainConfig,
    TrainingLog,
    finetune_stage,
    load_checkpoint,
    modal_matching_stage,
    save_checkpoint,
    write_checkpoints,
)
from .transe import train_transe

CORPUS_FILE = "corpus.jsonl"
VOCAB_FILE = "vocab.txt"
LEXICON_FILE = "lexicon.tsv"
TRIPLES_FILE = "triples.tsv"
TEACHER_FILE = "teacher.nar"
CORPUS_CONFIG_FILE = "corpus_config.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; its values override flags")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="entsum", description="Entity-aware text and image summarization toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic multimodal corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-docs", type=int, default=100)
    g.add_argument("--vocab-size", type=int, default=200)
    g.add_argument("--n-entities", type=int, default=30)
    g.add_argument("--d-q", type=int, default=32)
    g.add_argument("--n-queries", type=int, default=4, help="|Q|, query rows per image")
    g.add_argument("--max-images", type=int, default=8)
    g.add_argument("--images-per-doc", type=int, default=3)
    g.add_argument("--max-summary-len", type=int, default=16)
    _add_config(g)

    t = sub.add_parser("train-transe", help="train TransE entity embeddings")
    t.add_argument("--triples", required=True)
    t.add_argument("--lexicon", help="lexicon TSV; fixes the entity count")
    t.add_argument("--n-entities", type=int)
    t.add_argument("--dim", type=int, default=32)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--margin", type=float, default=1.0)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    _add_config(t)

    tr = sub.add_parser("train", help="modal matching then fine-tuning")
    tr.add_argument("--data", required=True, help="corpus directory from gen-data")
    tr.add_argument("--train-file", help="training JSONL (default: <data>/corpus.jsonl)")
    tr.add_argument("--valid-file", help="validation JSONL (default: the training documents)")
    tr.add_argument("--out", required=True)
    tr.add_argument("--transe", help="entity table from train-transe (default: train one now)")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--alpha", type=float, default=1.0)
    tr.add_argument("--tau", type=float, default=1.0)
    tr.add_argument("--lr", type=float, default=3e-4)
    tr.add_argument("--batch-size", type=int, default=4)
    tr.add_argument("--stage1-epochs", type=int, default=50)
    tr.add_argument("--stage2-epochs", type=int, default=200)
    tr.add_argument("--n-subsets", type=int, default=1)
    tr.add_argument("--top-k", type=int, default=3)
    tr.add_argument("--d-model", type=int, default=64)
    tr.add_argument("--n-heads", type=int, default=4)
    tr.add_argument("--d-ff", type=int, default=256)
    tr.add_argument("--enc-layers", type=int, default=2)
    tr.add_argument("--dec-layers", type=int, default=2)
    tr.add_argument("--entity-dim", type=int, default=32)
    tr.add_argument("--max-images", type=int, default=8)
    tr.add_argument("--gate-mode", choices=GATE_MODES, default="learned")
    tr.add_argument("--teacher", default="toy")
    _add_config(tr)

    for name, helptext in (("evaluate", "score checkpoints on a split"), ("summarize", "summarize one document")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--data", required=True)
        e.add_argument("--docs", help="JSONL split (default: <data>/corpus.jsonl)")
        e.add_argument("--checkpoint", required=True, action="append")
        e.add_argument("--beam-size", type=int, default=5)
        e.add_argument("--gate-mode", choices=GATE_MODES, default="learned")
        e.add_argument("--seed", type=int, default=0)
        if name == "evaluate":
            e.add_argument("--out", help="write report.txt and report.json here")
        else:
            e.add_argument("--doc-id", required=True)
        _add_config(e)
    return parser


def _apply_config_file(args: argparse.Namespace) -> None:
    if not getattr(args, "config", None):
        return
    for n, line in enumerate(Path(args.config).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{args.config} line {n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        attr = key.replace("-", "_")
        if attr in ("command", "config") or not hasattr(args, attr):
            raise UsageError(f"{args.config} line {n}: unknown key {key!r}")
        current = getattr(args, attr)
        if isinstance(current, bool):
            setattr(args, attr, value.lower() in ("1", "true", "yes"))
        elif isinstance(current, int):
            setattr(args, attr, int(value))
        elif isinstance(current, float):
            setattr(args, attr, float(value))
        elif isinstance(current, list):
            setattr(args, attr, [value])
        else:
            setattr(args, attr, value)


def _print_config(args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in vars(args).items() if k != "config"}
    print(f"# config {json.dumps(resolved, sort_keys=True)}", file=sys.stderr)
    print(f"# seed {args.seed}", file=sys.stderr)


def _load_docs(data: Path, docs_file: str | None, model_cfg: ModelConfig | None = None):
    kwargs = {}
    if model_cfg is not None:
        kwargs = dict(n_entities=model_cfg.n_entities, max_images=model_cfg.max_images,
                      max_context=model_cfg.max_context, d_q=model_cfg.d_q)
    return load_msmo_jsonl(Path(docs_file) if docs_file else data / CORPUS_FILE, **kwargs)


def cmd_gen_data(args) -> int:
    cfg = CorpusConfig(
        n_docs=args.n_docs, vocab_size=args.vocab_size, n_entities=args.n_entities, d_q=args.d_q,
        n_queries=args.n_queries, max_images=args.max_images, images_per_doc=args.images_per_doc,
        max_summary_len=args.max_summary_len, seed=args.seed,
    )
    corpus = generate_corpus(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_jsonl(corpus.documents, out / CORPUS_FILE)
    corpus.vocab.save(out / VOCAB_FILE)
    corpus.lexicon.save_tsv(out / LEXICON_FILE)
    corpus.triples.save_tsv(out / TRIPLES_FILE)
    ToyTeacher.from_world(corpus.world, len(corpus.vocab)).save(out / TEACHER_FILE)
    (out / CORPUS_CONFIG_FILE).write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(corpus.documents)} documents to {out}")
    return 0


def cmd_train_transe(args) -> int:
    if args.n_entities is None and args.lexicon is None:
        n_ent = None
    else:
        n_ent = args.n_entities if args.n_entities is not None else len(EntityLexicon.load_tsv(args.lexicon))
    store = TripleStore.load_tsv(args.triples, n_entities=n_ent)
    emb = train_transe(store, dim=args.dim, epochs=args.epochs, margin=args.margin, lr=args.lr, seed=args.seed)
    save_arrays(args.out, {"entity": emb.entity, "relation": emb.relation})
    print(f"trained TransE on {len(store)} triples; final epoch loss {emb.epoch_losses[-1] if emb.epoch_losses else 0.0}")
    return 0


def cmd_train(args) -> int:
    data = Path(args.data)
    vocab = Vocab.load(data / VOCAB_FILE)
    lexicon = EntityLexicon.load_tsv(data / LEXICON_FILE)
    ccfg = json.loads((data / CORPUS_CONFIG_FILE).read_text())
    model_cfg = ModelConfig(
        vocab_size=len(vocab), n_entities=len(lexicon), d_q=ccfg["d_q"], n_queries=ccfg["n_queries"],
        d_model=args.d_model, n_heads=args.n_heads, d_ff=args.d_ff, enc_layers=args.enc_layers,
        dec_layers=args.dec_layers, entity_dim=args.entity_dim, max_images=args.max_images,
        max_summary_len=ccfg["max_summary_len"], max_context=ccfg["max_context"], seed=args.seed,
    )
    train_docs = _load_docs(data, args.train_file, model_cfg)
    valid_docs = _load_docs(data, args.valid_file, model_cfg) if args.valid_file else None
    if not valid_docs:
        print("# no validation documents; checkpoints are ranked on the training documents", file=sys.stderr)
    if args.transe:
        entity_table = load_arrays(args.transe)["entity"]
    else:
        store = TripleStore.load_tsv(data / TRIPLES_FILE, n_entities=len(lexicon))
        entity_table = train_transe(store, dim=args.entity_dim, seed=args.seed).entity
    if args.teacher not in TEACHERS:
        raise ContractError(f"unknown teacher {args.teacher!r}; registered: {sorted(TEACHERS)}")
    teacher = TEACHERS[args.teacher](data / TEACHER_FILE)

    model = MultimodalSummarizer.initialize(model_cfg, entity_table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stage1 = TrainConfig(stage="modal_matching", epochs=args.stage1_epochs, learning_rate=args.lr,
                         batch_size=args.batch_size, seed=args.seed)
    stage2 = TrainConfig(stage="finetune", epochs=args.stage2_epochs, learning_rate=args.lr,
                         batch_size=args.batch_size, alpha=args.alpha, tau=args.tau, n_subsets=args.n_subsets,
                         top_k_checkpoints=args.top_k, gate_mode=args.gate_mode, seed=args.seed)
    with open(out / "train.log", "w", encoding="utf-8") as fh:
        log = TrainingLog(stream=fh)
        modal_matching_stage(model, train_docs, stage1, log)
        model, kept = finetune_stage(model, train_docs, stage2, teacher, valid_docs, log)
    paths = write_checkpoints(model, kept, out)
    save_checkpoint(model, out / "final.nar")
    (out / "config.json").write_text(json.dumps(
        {"model": asdict(model_cfg), "stage1": asdict(stage1), "stage2": asdict(stage2)}, indent=2, sort_keys=True) + "\n")
    for c, p in zip(kept, paths):
        print(f"kept {p.name} val_loss={c.val_loss!r}")
    return 0


def cmd_evaluate(args) -> int:
    models = [load_checkpoint(p) for p in args.checkpoint]
    docs = _load_docs(Path(args.data), args.docs, models[0].config)
    if not docs:
        raise ContractError("no documents to evaluate")
    reports = [evaluate(m, docs, args.beam_size, args.gate_mode)[0] for m in models]
    report = mean_report(reports)
    sys.stdout.write(report.to_text())
    print(report.to_json())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(report.to_text())
        (out / "report.json").write_text(report.to_json() + "\n")
    return 0


def cmd_summarize(args) -> int:
    model = load_checkpoint(args.checkpoint[0])
    data = Path(args.data)
    docs = {d.id: d for d in _load_docs(data, args.docs, model.config)}
    if args.doc_id not in docs:
        raise ContractError(f"no document with id {args.doc_id!r}")
    s = summarize_document(model, docs[args.doc_id], args.beam_size, args.gate_mode)
    vocab_path = data / VOCAB_FILE
    words = Vocab.load(vocab_path).decode(s.tokens) if vocab_path.exists() else [str(t) for t in s.tokens]
    print(f"doc_id={s.doc_id}")
    print(f"summary={' '.join(words)}")
    print(f"summary_ids={' '.join(map(str, s.tokens))}")
    print(f"image_index={s.image_index}")
    print(f"w_te={s.w_te!r}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-transe": cmd_train_transe,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "summarize": cmd_summarize,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_config_file(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    _print_config(args)
    try:
        return COMMANDS[args.command](args)
    except (ContractError, LoadError, CheckpointError, ArrayFileError, NonFiniteError,
            FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
