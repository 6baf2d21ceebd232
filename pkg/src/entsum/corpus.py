"""Synthetic multimodal corpora, tokenization, entity lexicons and JSONL I/O."""

from __future__ import annotations

import json
import re
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .arrayfile import load_arrays

PAD, UNK, T_CLS, T_SEP, K_CLS, BOS, EOS = range(7)
RESERVED_TOKENS = ("<pad>", "<unk>", "<t_cls>", "<t_sep>", "<k_cls>", "<s>", "</s>")
UNK_TOKEN = RESERVED_TOKENS[UNK]

# Entity categories a lexicon row may carry.
ENTITY_CATEGORIES = (
    "actions_verbs",
    "objects_entities",
    "people_groups",
    "language_communication",
    "properties_attributes",
    "time_events",
    "relations_connections",
    "numbers_quantities",
)

_TOKEN_RE = re.compile(r"[^\W_]+|_+|[^\w\s]", re.UNICODE)
_SENTENCE_END = {".", "!", "?"}


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class LoadError(ValueError):
    """A corpus file could not be parsed or failed validation."""


# -- vocabulary & tokenization ----------------------------------------------------------


class Vocab(Mapping):
    """Token string <-> id table. Ids 0..6 are the reserved specials."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ContractError(f"vocab must start with the reserved tokens {RESERVED_TOKENS}")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}
        if len(self.stoi) != len(tokens):
            raise ContractError("duplicate token in vocab")

    def __getitem__(self, token: str) -> int:
        return self.stoi[token]

    def __iter__(self) -> Iterator[str]:
        return iter(self.itos)

    def __len__(self) -> int:
        return len(self.itos)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> Vocab:
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def tokenize(text: str, vocab: Mapping[str, int]) -> list[int]:
    """Lowercase, split on whitespace/punctuation, map unknown words to UNK."""
    out = []
    for w in split_words(text):
        idx = vocab.get(w)
        out.append(vocab[UNK_TOKEN] if idx is None else idx)
    return out


def segment_sentences(words: Sequence[str]) -> list[int]:
    """Sentence lengths for a word list; a sentence ends after '.', '!' or '?'."""
    lengths, n = [], 0
    for w in words:
        n += 1
        if w in _SENTENCE_END:
            lengths.append(n)
            n = 0
    if n:
        lengths.append(n)
    return lengths


# -- entities ----------------------------------------------------------------------------


@dataclass
class EntityLexicon:
    """Surface form (tuple of lowercased words) -> dense entity id."""

    entries: dict[tuple[str, ...], int] = field(default_factory=dict)
    categories: dict[int, str] = field(default_factory=dict)
    embedding_dim: int = 32

    def __post_init__(self):
        ids = sorted(self.entries.values())
        if ids != list(range(len(ids))):
            raise ContractError("entity ids must be dense 0..|E|-1 with one surface form each")
        for eid, cat in self.categories.items():
            if cat not in ENTITY_CATEGORIES:
                raise ContractError(f"entity {eid}: unknown category {cat!r}")
        self._max_len = max((len(k) for k in self.entries), default=0)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def max_form_length(self) -> int:
        return self._max_len

    def surface(self, entity_id: int) -> tuple[str, ...]:
        for form, eid in self.entries.items():
            if eid == entity_id:
                return form
        raise KeyError(entity_id)

    def save_tsv(self, path) -> None:
        rows = sorted(self.entries.items(), key=lambda kv: kv[1])
        lines = [f"{' '.join(form)}\t{eid}\t{self.categories.get(eid, '')}" for form, eid in rows]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @classmethod
    def load_tsv(cls, path, embedding_dim: int = 32) -> EntityLexicon:
        entries, cats = {}, {}
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) < 2:
                raise LoadError(f"line {n}: expected surface_form<TAB>entity_id[<TAB>category]")
            form = tuple(split_words(cols[0]))
            if form in entries:
                raise LoadError(f"line {n}: duplicate surface form {cols[0]!r}")
            entries[form] = int(cols[1])
            if len(cols) > 2 and cols[2]:
                cats[int(cols[1])] = cols[2]
        return cls(entries, cats, embedding_dim)


@dataclass(frozen=True)
class EntityMatch:
    entity_id: int
    start: int
    end: int  # exclusive


def extract_entities(tokens: Sequence, lexicon: EntityLexicon, vocab: Vocab | None = None) -> list[EntityMatch]:
    """Greedy left-to-right longest match of lexicon surface forms.

    ``tokens`` are words, or ids when ``vocab`` is given. Matched spans never
    overlap. Each entity is reported once, at its first occurrence.
    """
    words = vocab.decode(tokens) if vocab is not None else [str(t).lower() for t in tokens]
    out: list[EntityMatch] = []
    seen: set[int] = set()
    i, n = 0, len(words)
    while i < n:
        hit = None
        for span in range(min(lexicon.max_form_length, n - i), 0, -1):
            eid = lexicon.entries.get(tuple(words[i : i + span]))
            if eid is not None:
                hit = (eid, span)
                break
        if hit is None:
            i += 1
            continue
        eid, span = hit
        if eid not in seen:
            seen.add(eid)
            out.append(EntityMatch(eid, i, i + span))
        i += span
    return out


def document_entities(
    tokens: Sequence[int], sentence_lengths: Sequence[int], lexicon: EntityLexicon, vocab: Vocab
) -> list[tuple[int, int]]:
    """(entity_id, sentence_index) pairs, matching within each sentence."""
    out, pos = [], 0
    for s, n in enumerate(sentence_lengths):
        for m in extract_entities(tokens[pos : pos + n], lexicon, vocab):
            out.append((m.entity_id, s))
        pos += n
    return out


@dataclass
class TripleStore:
    triples: np.ndarray  # (n, 3) int64 rows of (head, relation, tail)
    n_entities: int
    n_relations: int

    def __post_init__(self):
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        t = self.triples
        if len(t):
            if t[:, [0, 2]].min() < 0 or t[:, [0, 2]].max() >= self.n_entities:
                raise ContractError("triple entity id out of range")
            if t[:, 1].min() < 0 or t[:, 1].max() >= self.n_relations:
                raise ContractError("triple relation id out of range")
            if len(np.unique(t, axis=0)) != len(t):
                raise ContractError("duplicate triple")

    def __len__(self) -> int:
        return len(self.triples)

    def save_tsv(self, path) -> None:
        lines = [f"{h}\t{r}\t{t}" for h, r, t in self.triples.tolist()]
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @classmethod
    def load_tsv(cls, path, n_entities: int | None = None, n_relations: int | None = None) -> TripleStore:
        rows = []
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise LoadError(f"line {n}: expected h<TAB>r<TAB>t")
            rows.append([int(c) for c in cols])
        arr = np.array(rows, dtype=np.int64).reshape(-1, 3)
        ne = n_entities if n_entities is not None else int(arr[:, [0, 2]].max()) + 1 if len(arr) else 0
        nr = n_relations if n_relations is not None else int(arr[:, 1].max()) + 1 if len(arr) else 0
        return cls(arr, ne, nr)


# -- documents -----------------------------------------------------------------------------


@dataclass
class Document:
    id: str
    text_tokens: list[int]
    sentence_lengths: list[int]
    images: np.ndarray  # (M, |Q|, d_Q)
    entities: list[tuple[int, int]]  # (entity_id, sentence_index)
    reference_summary: list[int]
    reference_images: list[int] | None = None
    image_sources: list[int] | None = None  # generator metadata: entity behind each image

    @property
    def n_images(self) -> int:
        return int(self.images.shape[0])

    def entity_groups(self) -> list[list[int]]:
        """Entity ids grouped by sentence, in sentence order; empty groups dropped."""
        groups: dict[int, list[int]] = {}
        for eid, s in self.entities:
            groups.setdefault(s, []).append(eid)
        return [groups[s] for s in sorted(groups)]

    def text_rows(self) -> int:
        return len(self.text_tokens) + 2 * max(len(self.sentence_lengths), 1)

    def entity_rows(self) -> int:
        return len(self.entities) + max(len(self.entity_groups()), 1)

    def image_rows(self) -> int:
        return self.n_images * (self.images.shape[1] + 1) if self.n_images else 0

    def to_json(self) -> dict:
        d = {
            "id": self.id,
            "text_tokens": list(map(int, self.text_tokens)),
            "sentence_lengths": list(map(int, self.sentence_lengths)),
            "images": self.images.tolist(),
            "entities": [[int(e), int(s)] for e, s in self.entities],
            "reference_summary": list(map(int, self.reference_summary)),
        }
        if self.reference_images is not None:
            d["reference_images"] = list(map(int, self.reference_images))
        if self.image_sources is not None:
            d["image_sources"] = list(map(int, self.image_sources))
        return d

    def equals(self, other: Document) -> bool:
        return (
            self.id == other.id
            and self.text_tokens == other.text_tokens
            and self.sentence_lengths == other.sentence_lengths
            and self.images.shape == other.images.shape
            and np.array_equal(self.images, other.images)
            and self.entities == other.entities
            and self.reference_summary == other.reference_summary
            and self.reference_images == other.reference_images
            and self.image_sources == other.image_sources
        )


def validate_document(
    doc: Document,
    *,
    n_entities: int | None = None,
    max_images: int = 8,
    max_context: int = 1024,
    d_q: int | None = None,
) -> None:
    """Raise ContractError if ``doc`` breaks a Document invariant."""
    if doc.images.ndim != 3:
        raise ContractError(f"{doc.id}: images must be M x |Q| x d_Q, got shape {doc.images.shape}")
    if d_q is not None and doc.n_images and doc.images.shape[2] != d_q:
        raise ContractError(f"{doc.id}: image feature dim {doc.images.shape[2]} != d_Q {d_q}")
    if doc.n_images > max_images:
        raise ContractError(f"{doc.id}: {doc.n_images} images exceeds max_images={max_images}")
    if sum(doc.sentence_lengths) != len(doc.text_tokens):
        raise ContractError(f"{doc.id}: sentence_lengths sum to {sum(doc.sentence_lengths)}, text has {len(doc.text_tokens)} tokens")
    n_sent = len(doc.sentence_lengths)
    for eid, s in doc.entities:
        if n_entities is not None and not 0 <= eid < n_entities:
            raise ContractError(f"{doc.id}: entity id {eid} not in lexicon")
        if not 0 <= s < max(n_sent, 1):
            raise ContractError(f"{doc.id}: entity sentence index {s} out of range")
    if doc.reference_images is not None:
        bad = [i for i in doc.reference_images if not 0 <= i < doc.n_images]
        if bad:
            raise ContractError(f"{doc.id}: reference_images {bad} outside 0..{doc.n_images - 1}")
    if doc.image_sources is not None and len(doc.image_sources) != doc.n_images:
        raise ContractError(f"{doc.id}: image_sources length != number of images")
    longest = max(doc.text_rows(), doc.entity_rows()) + doc.image_rows()
    if longest > max_context:
        raise ContractError(f"{doc.id}: encoder sequence of {longest} positions exceeds max_context={max_context}")


# -- synthetic generation -----------------------------------------------------------------


@dataclass
class CorpusConfig:
    n_docs: int = 100
    vocab_size: int = 200
    n_entities: int = 30
    d_q: int = 32
    n_queries: int = 4
    max_images: int = 8
    images_per_doc: int = 3
    topic_entities: int = 2
    distractor_entities: int = 2
    sentences_per_doc: int = 3
    n_relations: int = 4
    latent_dim: int = 16
    noise: float = 0.1
    max_summary_len: int = 16
    max_context: int = 1024
    seed: int = 0

    def __post_init__(self):
        for name in ("vocab_size", "n_entities", "d_q", "n_queries", "max_images", "images_per_doc",
                     "topic_entities", "sentences_per_doc", "n_relations", "latent_dim"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.n_docs < 0:
            raise ContractError("n_docs must be non-negative")
        if self.images_per_doc > self.max_images:
            raise ContractError("images_per_doc exceeds max_images")
        if self.topic_entities + self.distractor_entities > self.n_entities:
            raise ContractError("not enough entities for topic + distractor draws")


@dataclass
class World:
    """Hidden generator state: the latent concept behind each entity and image."""

    latent: np.ndarray  # (|E|, latent_dim)
    feature_maps: np.ndarray  # (|Q|, d_Q, latent_dim)
    entity_words: list[list[int]]  # token ids of each entity's surface form


@dataclass
class Corpus:
    documents: list[Document]
    vocab: Vocab
    lexicon: EntityLexicon
    triples: TripleStore
    world: World
    config: CorpusConfig


def _words_per_entity(rng: np.random.Generator, n: int) -> list[int]:
    return [int(k) for k in rng.integers(1, 3, size=n)]


def generate_corpus(config: CorpusConfig) -> Corpus:
    """Build a seeded corpus whose summaries and reference images follow from topic entities.

    Each document draws topic and distractor entities. The first sentence
    mentions the topic entities, later sentences mention the distractors.
    The summary is ``<topic 1> and <topic 2> ... .`` in order of mention.
    Image features are a fixed per-query linear map of the source entity's
    latent vector plus Gaussian noise.
    """
    cfg = config
    rng = np.random.default_rng(cfg.seed)

    lens = _words_per_entity(rng, cfg.n_entities)
    n_entity_words = sum(lens)
    grammar = [".", "and"]
    n_filler = cfg.vocab_size - len(RESERVED_TOKENS) - len(grammar) - n_entity_words
    if n_filler < 4:
        raise ContractError(
            f"vocab_size={cfg.vocab_size} too small: need {len(RESERVED_TOKENS) + len(grammar) + n_entity_words + 4}"
        )
    summary_len = sum(sorted(lens)[-cfg.topic_entities:]) + cfg.topic_entities
    if summary_len > cfg.max_summary_len:
        raise ContractError(f"summary may reach {summary_len} tokens > max_summary_len={cfg.max_summary_len}")

    entity_tokens = [f"ent{j}" for j in range(n_entity_words)]
    filler_tokens = [f"w{j}" for j in range(n_filler)]
    vocab = Vocab(list(RESERVED_TOKENS) + grammar + entity_tokens + filler_tokens)
    period, conj = vocab["."], vocab["and"]
    filler_ids = np.array([vocab[t] for t in filler_tokens])

    entries, entity_words, pos = {}, [], 0
    cats = {}
    for eid, k in enumerate(lens):
        form = tuple(entity_tokens[pos : pos + k])
        pos += k
        entries[form] = eid
        entity_words.append([vocab[w] for w in form])
        cats[eid] = ENTITY_CATEGORIES[int(rng.integers(len(ENTITY_CATEGORIES)))]
    lexicon = EntityLexicon(entries, cats)

    latent = rng.standard_normal((cfg.n_entities, cfg.latent_dim))
    feature_maps = rng.standard_normal((cfg.n_queries, cfg.d_q, cfg.latent_dim)) / np.sqrt(cfg.latent_dim)
    world = World(latent, feature_maps, entity_words)

    triples = set()
    for h in range(cfg.n_entities):
        for _ in range(2):
            t = int(rng.integers(cfg.n_entities - 1))
            t = t + 1 if t >= h else t
            triples.add((h, int(rng.integers(cfg.n_relations)), t))
    store = TripleStore(np.array(sorted(triples), dtype=np.int64), cfg.n_entities, cfg.n_relations)

    docs = []
    for d in range(cfg.n_docs):
        picks = rng.choice(cfg.n_entities, cfg.topic_entities + cfg.distractor_entities, replace=False)
        topic = [int(e) for e in picks[: cfg.topic_entities]]
        distract = [int(e) for e in picks[cfg.topic_entities :]]

        sentences: list[list[int]] = []
        mentions: list[list[int]] = [topic] + [[] for _ in range(cfg.sentences_per_doc - 1)]
        for i, e in enumerate(distract):
            slot = 1 + i % (cfg.sentences_per_doc - 1) if cfg.sentences_per_doc > 1 else 0
            mentions[slot].append(e)
        for ents in mentions:
            units: list[list[int]] = [[int(w)] for w in rng.choice(filler_ids, int(rng.integers(2, 5)))]
            for e in ents:
                units.insert(int(rng.integers(len(units) + 1)), entity_words[e])
            sentences.append([w for u in units for w in u] + [period])
        # summary follows the order of mention in the first sentence
        first = sentences[0]
        order = sorted(topic, key=lambda e: _find(first, entity_words[e]))
        summary: list[int] = []
        for i, e in enumerate(order):
            if i:
                summary.append(conj)
            summary.extend(entity_words[e])
        summary.append(period)

        in_article = topic + distract
        m = cfg.images_per_doc
        sources = [topic[int(rng.integers(len(topic)))]] + [int(e) for e in rng.choice(in_article, m - 1)]
        sources = [sources[i] for i in rng.permutation(m)]
        feats = np.einsum("qdl,ml->mqd", feature_maps, latent[sources])
        feats = feats + cfg.noise * rng.standard_normal(feats.shape)
        ref_imgs = [i for i, s in enumerate(sources) if s in topic][:3]

        tokens = [w for s in sentences for w in s]
        sent_lens = [len(s) for s in sentences]
        doc = Document(
            id=f"doc{d:05d}",
            text_tokens=tokens,
            sentence_lengths=sent_lens,
            images=feats,
            entities=document_entities(tokens, sent_lens, lexicon, vocab),
            reference_summary=summary,
            reference_images=ref_imgs,
            image_sources=sources,
        )
        validate_document(doc, n_entities=cfg.n_entities, max_images=cfg.max_images,
                          max_context=cfg.max_context, d_q=cfg.d_q)
        docs.append(doc)
    return Corpus(docs, vocab, lexicon, store, world, cfg)


def _find(seq: list[int], sub: list[int]) -> int:
    for i in range(len(seq) - len(sub) + 1):
        if seq[i : i + len(sub)] == sub:
            return i
    return len(seq)


# -- JSONL I/O -------------------------------------------------------------------------------

_REQUIRED = ("id", "text_tokens", "sentence_lengths", "entities", "reference_summary")


def save_jsonl(docs: Sequence[Document], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_json(), separators=(",", ":")) + "\n")


def _parse_document(obj: dict, base: Path, n: int) -> Document:
    for name in _REQUIRED:
        if name not in obj:
            raise LoadError(f"line {n}: missing {name}")
    if "images" in obj:
        images = np.array(obj["images"], dtype=np.float64)
        if images.size == 0:
            images = images.reshape(0, 0, 0) if images.ndim != 3 else images
    elif "image_file" in obj:
        arrays = load_arrays(base / obj["image_file"])
        key = obj.get("image_key", obj["id"])
        if key not in arrays:
            raise LoadError(f"line {n}: image_file has no array {key!r}")
        images = arrays[key].astype(np.float64)
    else:
        raise LoadError(f"line {n}: missing images")
    return Document(
        id=str(obj["id"]),
        text_tokens=[int(t) for t in obj["text_tokens"]],
        sentence_lengths=[int(t) for t in obj["sentence_lengths"]],
        images=images,
        entities=[(int(e), int(s)) for e, s in obj["entities"]],
        reference_summary=[int(t) for t in obj["reference_summary"]],
        reference_images=None if obj.get("reference_images") is None else [int(i) for i in obj["reference_images"]],
        image_sources=None if obj.get("image_sources") is None else [int(i) for i in obj["image_sources"]],
    )


def load_msmo_jsonl(
    path,
    *,
    n_entities: int | None = None,
    max_images: int = 8,
    max_context: int = 1024,
    d_q: int | None = None,
) -> list[Document]:
    """Read and validate one Document per non-blank line.

    Errors name the 1-based line and the offending field or limit.
    """
    path = Path(path)
    docs = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LoadError(f"line {n}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise LoadError(f"line {n}: expected a JSON object")
            doc = _parse_document(obj, path.parent, n)
            try:
                validate_document(doc, n_entities=n_entities, max_images=max_images,
                                  max_context=max_context, d_q=d_q)
            except ContractError as exc:
                raise LoadError(f"line {n}: {exc}") from exc
            docs.append(doc)
    return docs


def config_to_json(cfg: CorpusConfig) -> str:
    return json.dumps(asdict(cfg), sort_keys=True)
