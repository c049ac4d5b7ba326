"""Corpus ingestion and construction.

Raw genre-labeled text collections are tokenized under a TokenPolicy, share a
single Vocabulary, and can be filtered/merged with the usual dataset
construction rules (min word count, per-genre cap, genre merging). A seeded
order-1 Markov generator produces synthetic corpora for tests and experiments.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

CORPUS_FORMAT = "dvlm-corpus"
CORPUS_FORMAT_VERSION = 1

_TOKEN_RE = re.compile(r"[\w'-]+|[^\w\s]")
_SENTENCE_END = {".", "!", "?"}


class CorpusError(RuntimeError):
    pass


@dataclass(frozen=True)
class TokenPolicy:
    """Tokenization and vocabulary policy.

    Words below `min_count` map to the unknown token; at most `max_vocab`
    types are kept (most frequent first, ties broken lexicographically).
    """

    lowercase: bool = True
    min_count: int = 3
    max_vocab: int = 20000
    unk_token: str = "<unk>"
    eos_token: str = "</s>"

    def tokenize(self, text: str) -> list[str]:
        """Split into word and punctuation tokens, inserting the end-of-
        sentence token after sentence-final punctuation and at text end."""
        if self.lowercase:
            text = text.lower()
        out: list[str] = []
        for tok in _TOKEN_RE.findall(text):
            out.append(tok)
            if tok in _SENTENCE_END:
                out.append(self.eos_token)
        if out and out[-1] != self.eos_token:
            out.append(self.eos_token)
        return out


class Vocabulary:
    """Dense id <-> surface form bijection with per-type corpus counts.

    Ids 0 and 1 are always the unknown and end-of-sentence tokens.
    """

    def __init__(self, words: Sequence[str], counts: Sequence[int], policy: TokenPolicy):
        self.words = list(words)
        self.counts = list(int(c) for c in counts)
        self.policy = policy
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise CorpusError("vocabulary surfaces are not unique")
        self.unk_id = self.index[policy.unk_token]
        self.eos_id = self.index[policy.eos_token]

    @classmethod
    def build(cls, streams: Iterable[Sequence[str]], policy: TokenPolicy) -> "Vocabulary":
        counts: dict[str, int] = {}
        total = 0
        for stream in streams:
            for w in stream:
                counts[w] = counts.get(w, 0) + 1
                total += 1
        eos_count = counts.pop(policy.eos_token, 0)
        counts.pop(policy.unk_token, None)
        kept = sorted((w for w, c in counts.items() if c >= policy.min_count),
                      key=lambda w: (-counts[w], w))
        kept = kept[: max(policy.max_vocab - 2, 0)]
        kept_total = sum(counts[w] for w in kept)
        unk_count = total - eos_count - kept_total
        words = [policy.unk_token, policy.eos_token] + kept
        freqs = [unk_count, eos_count] + [counts[w] for w in kept]
        return cls(words, freqs, policy)

    def __len__(self) -> int:
        return len(self.words)

    def map(self, stream: Sequence[str]) -> tuple[int, ...]:
        unk = self.unk_id
        index = self.index
        return tuple(index.get(w, unk) for w in stream)

    def fingerprint(self) -> str:
        blob = json.dumps([self.words, self.counts], separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Document:
    """One tokenized, genre-labeled document.

    `words` are the surface tokens (end-of-sentence markers included);
    `tokens` are the parallel vocabulary ids; `raw_word_count` is the
    whitespace word count of the source text before any vocabulary mapping.
    """

    id: str
    genre: str
    words: tuple[str, ...]
    tokens: tuple[int, ...]
    raw_word_count: int


class LabeledCorpus:
    """Immutable collection of documents sharing one vocabulary."""

    def __init__(self, documents: Sequence[Document], vocabulary: Vocabulary,
                 policy: TokenPolicy):
        self.documents = tuple(sorted(documents, key=lambda d: d.id))
        self.vocabulary = vocabulary
        self.policy = policy
        counts: dict[str, int] = {}
        for doc in self.documents:
            counts[doc.genre] = counts.get(doc.genre, 0) + 1
        self.genre_counts = dict(sorted(counts.items()))
        self.validate()

    @property
    def genres(self) -> list[str]:
        return list(self.genre_counts)

    def __len__(self) -> int:
        return len(self.documents)

    def validate(self) -> None:
        if sum(self.genre_counts.values()) != len(self.documents):
            raise CorpusError("per-genre counts do not sum to document count")
        size = len(self.vocabulary)
        ids = set()
        for doc in self.documents:
            if not doc.tokens:
                raise CorpusError(f"document {doc.id!r} has no tokens")
            if doc.id in ids:
                raise CorpusError(f"duplicate document id {doc.id!r}")
            ids.add(doc.id)
            if max(doc.tokens) >= size:
                raise CorpusError(f"document {doc.id!r} has out-of-range token ids")

    def subset(self, doc_ids: Iterable[str]) -> "LabeledCorpus":
        """View with only the given documents; the vocabulary is kept as-is
        (used for fold-restricted fitting, not a fresh ingestion)."""
        wanted = set(doc_ids)
        docs = [d for d in self.documents if d.id in wanted]
        missing = wanted - {d.id for d in docs}
        if missing:
            raise CorpusError(f"unknown document ids: {sorted(missing)}")
        return LabeledCorpus(docs, self.vocabulary, self.policy)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.vocabulary.fingerprint().encode())
        for doc in self.documents:
            h.update(doc.id.encode())
            h.update(doc.genre.encode())
            h.update(np.asarray(doc.tokens, dtype=np.int64).tobytes())
        return h.hexdigest()


def _rebuild(records: Sequence[tuple[str, str, tuple[str, ...], int]],
             policy: TokenPolicy) -> LabeledCorpus:
    """Construct a corpus from (id, genre, words, raw_word_count) records,
    building the vocabulary over the whole collection."""
    vocab = Vocabulary.build((words for _, _, words, _ in records), policy)
    docs = [Document(doc_id, genre, tuple(words), vocab.map(words), raw)
            for doc_id, genre, words, raw in records]
    return LabeledCorpus(docs, vocab, policy)


def load_corpus(manifest: str | Path, policy: TokenPolicy | None = None) -> LabeledCorpus:
    """Ingest the documents listed in a manifest (one `path<TAB>genre` record
    per line, paths relative to the manifest)."""
    policy = policy or TokenPolicy()
    manifest = Path(manifest)
    if not manifest.is_file():
        raise CorpusError(f"manifest not found: {manifest}")
    records = []
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rel, genre = line.split("\t")
        except ValueError:
            raise CorpusError(f"{manifest}:{lineno}: expected '<path>\\t<genre>'")
        path = manifest.parent / rel
        if not path.is_file():
            raise CorpusError(f"{manifest}:{lineno}: document not found: {path}")
        text = path.read_text(encoding="utf-8")
        words = policy.tokenize(text)
        if not words:
            log.warning("excluding empty document %s", path)
            continue
        records.append((rel, genre.strip(), tuple(words), len(text.split())))
    if not records:
        raise CorpusError(f"no usable documents in {manifest}")
    return _rebuild(records, policy)


def filter_documents(corpus: LabeledCorpus, min_words: int = 0,
                     per_genre_cap: int | None = None,
                     drop_genres: Iterable[str] = ()) -> LabeledCorpus:
    """Apply dataset construction rules: drop short documents and unwanted
    genres, cap each genre (keeping documents in id order), and rebuild the
    vocabulary over the survivors. Idempotent for fixed arguments."""
    dropped = set(drop_genres)
    taken: dict[str, int] = {}
    records = []
    for doc in corpus.documents:  # already sorted by id
        if doc.genre in dropped or doc.raw_word_count < min_words:
            continue
        if per_genre_cap is not None and taken.get(doc.genre, 0) >= per_genre_cap:
            continue
        taken[doc.genre] = taken.get(doc.genre, 0) + 1
        records.append((doc.id, doc.genre, doc.words, doc.raw_word_count))
    if not records:
        raise CorpusError("filter removed every document")
    return _rebuild(records, corpus.policy)


def merge_genres(corpus: LabeledCorpus, mapping: Mapping[str, str]) -> LabeledCorpus:
    """Rewrite genre labels; keys must be existing genres."""
    unknown = set(mapping) - set(corpus.genre_counts)
    if unknown:
        raise CorpusError(f"mapping keys are not existing genres: {sorted(unknown)}")
    if any(not target for target in mapping.values()):
        raise CorpusError("mapping to an empty genre label")
    docs = [Document(d.id, mapping.get(d.genre, d.genre), d.words, d.tokens,
                     d.raw_word_count)
            for d in corpus.documents]
    return LabeledCorpus(docs, corpus.vocabulary, corpus.policy)


# ---------------------------------------------------------------------------
# Synthetic corpora


@dataclass(frozen=True)
class SynthGenre:
    """One order-1 Markov word source; sentence_length overrides the
    spec-level sentence length range when set."""

    name: str
    transition: np.ndarray  # (V, V) row-stochastic
    initial: np.ndarray     # (V,)
    sentence_length: tuple[int, int] | None = None


@dataclass(frozen=True)
class SynthSpec:
    """Generator spec: >=2 genres over a shared vocabulary, each a distinct
    Markov source, plus document count and length distribution."""

    vocab: tuple[str, ...]
    genres: tuple[SynthGenre, ...]
    docs_per_genre: int = 50
    doc_length: tuple[int, int] = (80, 160)
    sentence_length: tuple[int, int] = (8, 16)
    min_count: int = 1


def synth_corpus(spec: SynthSpec, seed: int) -> LabeledCorpus:
    """Deterministically sample a labeled corpus from the generator spec."""
    if len(spec.genres) < 2:
        raise CorpusError("synthetic spec needs at least 2 genres")
    V = len(spec.vocab)
    for genre in spec.genres:
        trans = np.asarray(genre.transition, dtype=np.float64)
        init = np.asarray(genre.initial, dtype=np.float64)
        if trans.shape != (V, V) or init.shape != (V,):
            raise CorpusError(f"genre {genre.name!r}: shape mismatch with vocabulary")
        if not (np.allclose(trans.sum(axis=1), 1.0, atol=1e-9)
                and np.allclose(init.sum(), 1.0, atol=1e-9)):
            raise CorpusError(f"genre {genre.name!r}: distributions must sum to 1")

    policy = TokenPolicy(min_count=spec.min_count, max_vocab=V + 2)
    rng = np.random.default_rng(seed)
    lo, hi = spec.doc_length
    records = []
    for genre in spec.genres:
        trans = np.asarray(genre.transition, dtype=np.float64)
        init = np.asarray(genre.initial, dtype=np.float64)
        slo, shi = genre.sentence_length or spec.sentence_length
        for di in range(spec.docs_per_genre):
            length = int(rng.integers(lo, hi + 1))
            words: list[str] = []
            remaining = length
            while remaining > 0:
                sent_len = min(int(rng.integers(slo, shi + 1)), remaining)
                state = int(rng.choice(V, p=init))
                words.append(spec.vocab[state])
                for _ in range(sent_len - 1):
                    state = int(rng.choice(V, p=trans[state]))
                    words.append(spec.vocab[state])
                words.append(policy.eos_token)
                remaining -= sent_len
            records.append((f"{genre.name}-{di:04d}", genre.name, tuple(words), length))
    return _rebuild(records, policy)


def synth_preset(num_genres: int = 2, vocab_size: int = 30, docs_per_genre: int = 100,
                 doc_length: tuple[int, int] = (120, 200), successors: int = 8,
                 mass: float = 0.75, preset_seed: int = 1234) -> SynthSpec:
    """Ready-made spec whose genres differ in sequence statistics rather
    than in specific word sequences: in each genre every word routes `mass`
    of its probability uniformly onto its own seeded set of successor words,
    and genres use different sentence-length bands. Exact n-grams rarely
    repeat across documents, but the per-genre dynamics are strong."""
    if num_genres < 2:
        raise CorpusError("need at least 2 genres")
    V = vocab_size
    vocab = tuple(f"w{i:03d}" for i in range(V))
    rng = np.random.default_rng(preset_seed)
    genres = []
    for g in range(num_genres):
        trans = np.full((V, V), (1.0 - mass) / V)
        for i in range(V):
            subset = rng.choice(V, size=min(successors, V), replace=False)
            trans[i, subset] += mass / min(successors, V)
        initial = np.full(V, 1.0 / V)
        sent = (6 + 8 * (g % 2), 10 + 10 * (g % 2))
        genres.append(SynthGenre(f"genre{g}", trans, initial,
                                 sentence_length=sent))
    return SynthSpec(vocab=vocab, genres=tuple(genres),
                     docs_per_genre=docs_per_genre, doc_length=doc_length)


# ---------------------------------------------------------------------------
# Cache format


def save_corpus(corpus: LabeledCorpus, path: str | Path,
                fingerprint: str | None = None) -> None:
    payload = {
        "format": CORPUS_FORMAT,
        "version": CORPUS_FORMAT_VERSION,
        "fingerprint": fingerprint or "",
        "policy": {
            "lowercase": corpus.policy.lowercase,
            "min_count": corpus.policy.min_count,
            "max_vocab": corpus.policy.max_vocab,
            "unk_token": corpus.policy.unk_token,
            "eos_token": corpus.policy.eos_token,
        },
        "vocabulary": {"words": corpus.vocabulary.words,
                       "counts": corpus.vocabulary.counts},
        "documents": [
            {"id": d.id, "genre": d.genre, "words": list(d.words),
             "raw_word_count": d.raw_word_count}
            for d in corpus.documents
        ],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")),
                          encoding="utf-8")


def load_corpus_cache(path: str | Path) -> tuple[LabeledCorpus, str]:
    """Load a cached corpus; returns (corpus, embedded fingerprint)."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != CORPUS_FORMAT:
        raise CorpusError(f"{path}: not a corpus cache")
    if payload.get("version") != CORPUS_FORMAT_VERSION:
        raise CorpusError(f"{path}: unsupported corpus cache version")
    policy = TokenPolicy(**payload["policy"])
    vocab = Vocabulary(payload["vocabulary"]["words"], payload["vocabulary"]["counts"],
                       policy)
    docs = [Document(d["id"], d["genre"], tuple(d["words"]),
                     vocab.map(d["words"]), d["raw_word_count"])
            for d in payload["documents"]]
    return LabeledCorpus(docs, vocab, policy), payload.get("fingerprint", "")
