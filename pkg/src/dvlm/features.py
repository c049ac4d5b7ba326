"""Fold-aware feature providers: each one is fit on training documents only
and then vectorizes any document, so cross-validation never leaks test-fold
statistics into fitted models or indexes."""

from __future__ import annotations

import hashlib
import logging
from typing import Sequence

import numpy as np

from . import baselines
from .adaptation import FreezeMask, adapt, default_mask, dv_lstm, dv_rnn
from .corpus import Document, LabeledCorpus
from .lstm_lm import LstmLm, lstm_train
from .numerics import TrainConfig
from .rnn_lm import RnnLm, rnn_train
from .vectors import DocumentVector, concat_features
from .word_classes import WordClassMap, brown_cluster, class_tf_vector

log = logging.getLogger(__name__)

RNN_DV_PARTS = ("h", "k", "hk")
LSTM_DV_PARTS = ("bm", "ba", "bc", "dm")


def _ids_key(docs: Sequence[Document]) -> str:
    h = hashlib.sha256()
    for doc in sorted(docs, key=lambda d: d.id):
        h.update(doc.id.encode())
        h.update(b"\0")
    return h.hexdigest()


def _hash_arrays(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


class TfidfFeature:
    """n-gram TF-IDF with the index fit on training folds only."""

    def __init__(self, n: int = 5, top_k: int = 10000):
        self.n = n
        self.top_k = top_k
        self.recipe = f"tfidf:n={n}:top={top_k}"
        self.index: baselines.NgramIndex | None = None
        self._key = ""

    def fit(self, train_docs: Sequence[Document], corpus: LabeledCorpus) -> None:
        key = _ids_key(train_docs)
        if key == self._key:
            return
        self.index = baselines.NgramIndex.fit(train_docs, self.n, self.top_k)
        self._key = key

    def vector(self, doc: Document) -> DocumentVector:
        return self.index.transform(doc)

    def fit_fingerprint(self) -> str:
        terms = sorted(self.index.terms.items(), key=lambda kv: kv[1])
        h = hashlib.sha256(repr(terms).encode())
        h.update(self.index.doc_freq.tobytes())
        h.update(str(self.index.num_docs).encode())
        return h.hexdigest()


class ClassTfFeature:
    """Class term-frequency vector over Brown clusters fit on training
    folds (the class count is capped at the vocabulary size)."""

    def __init__(self, num_classes: int = 500, weighting: str = "tf"):
        self.num_classes = num_classes
        self.weighting = weighting
        self.recipe = f"class_tf:c={num_classes}:{weighting}"
        self.cmap: WordClassMap | None = None
        self.class_idf: np.ndarray | None = None
        self._key = ""

    def fit(self, train_docs: Sequence[Document], corpus: LabeledCorpus) -> None:
        key = _ids_key(train_docs)
        if key == self._key:
            return
        classes = min(self.num_classes, len(corpus.vocabulary))
        self.cmap = brown_cluster(corpus, classes, documents=train_docs)
        if self.weighting == "tfidf":
            df = np.zeros(classes)
            for doc in train_docs:
                present = np.unique(self.cmap.class_of[np.asarray(doc.tokens)])
                df[present] += 1.0
            idf = np.zeros(classes)
            seen = df > 0
            idf[seen] = np.log(len(train_docs) / df[seen])
            self.class_idf = idf
        self._key = key

    def vector(self, doc: Document) -> DocumentVector:
        return class_tf_vector(doc, self.cmap, self.weighting, self.class_idf)

    def fit_fingerprint(self) -> str:
        extra = self.class_idf if self.class_idf is not None else np.zeros(1)
        return _hash_arrays(self.cmap.class_of, extra)


class AdaptationEngine:
    """Shared per-fold state for the adapted-parameter features: Brown
    classes and a parent model fit on the training folds, plus a cache of
    per-document adaptations so sibling recipes (e.g. the dm/bm/bc parts)
    reuse one adaptation."""

    def __init__(self, family: str, parent_cfg: TrainConfig,
                 adapt_cfg: TrainConfig, hidden_size: int = 100,
                 compress_size: int = 100, num_classes: int | None = None,
                 mask: FreezeMask | None = None):
        if family not in ("rnn", "lstm"):
            raise ValueError(f"unknown model family {family!r}")
        self.family = family
        self.parent_cfg = parent_cfg
        self.adapt_cfg = adapt_cfg
        self.hidden_size = hidden_size
        self.compress_size = compress_size
        self.num_classes = num_classes or (100 if family == "rnn" else 500)
        self.mask = mask or default_mask(family)
        self.parent: RnnLm | LstmLm | None = None
        self._key = ""
        self._dv_cache: dict[str, dict[str, DocumentVector]] = {}

    def fit(self, train_docs: Sequence[Document], corpus: LabeledCorpus) -> None:
        key = _ids_key(train_docs)
        if key == self._key:
            return
        classes = min(self.num_classes, len(corpus.vocabulary))
        cmap = brown_cluster(corpus, classes, documents=train_docs)
        sub = corpus.subset([d.id for d in train_docs])
        if self.family == "rnn":
            self.parent = rnn_train(sub, self.parent_cfg, self.hidden_size, cmap)
        else:
            self.parent = lstm_train(sub, self.parent_cfg, cmap,
                                     self.compress_size, self.hidden_size)
        self._dv_cache = {}
        self._key = key

    def vector(self, doc: Document, part: str) -> DocumentVector:
        cached = self._dv_cache.get(doc.id)
        if cached is None:
            adapted = adapt(self.parent, doc, self.mask, self.adapt_cfg)
            if self.family == "rnn":
                cached = {p: dv_rnn(adapted, p) for p in RNN_DV_PARTS}
            else:
                cached = {p: dv_lstm(adapted, p) for p in LSTM_DV_PARTS}
            self._dv_cache[doc.id] = cached
        return cached[part]

    def fit_fingerprint(self) -> str:
        params = self.parent.params
        return _hash_arrays(self.parent.class_map.class_of,
                            *(params[n] for n in params.names()))


class AdaptedDvFeature:
    """One extracted part of the adapted parent (dv_rnn_* / dv_lstm_*)."""

    def __init__(self, engine: AdaptationEngine, part: str):
        valid = RNN_DV_PARTS if engine.family == "rnn" else LSTM_DV_PARTS
        if part not in valid:
            raise ValueError(f"unknown part {part!r} for {engine.family}")
        self.engine = engine
        self.part = part
        self.recipe = f"dv_{engine.family}_{part}"

    def fit(self, train_docs: Sequence[Document], corpus: LabeledCorpus) -> None:
        self.engine.fit(train_docs, corpus)

    def vector(self, doc: Document) -> DocumentVector:
        return self.engine.vector(doc, self.part)

    def fit_fingerprint(self) -> str:
        return self.engine.fit_fingerprint()


class PvdmFeature:
    """Paragraph vectors trained on the training folds; unseen documents are
    inferred against the frozen word/output vectors."""

    def __init__(self, cfg: baselines.PvdmConfig):
        self.cfg = cfg
        self.recipe = f"pvdm:dim={cfg.dim}"
        self.model: baselines.PvdmModel | None = None
        self._key = ""

    def fit(self, train_docs: Sequence[Document], corpus: LabeledCorpus) -> None:
        key = _ids_key(train_docs)
        if key == self._key:
            return
        class_map = None
        if self.cfg.negative_samples == 0:
            classes = min(self.cfg.softmax_classes, len(corpus.vocabulary))
            class_map = brown_cluster(corpus, classes, documents=train_docs)
        self.model = baselines.PvdmModel(self.cfg, len(corpus.vocabulary),
                                         class_map)
        self.model.fit(train_docs)
        self._key = key

    def vector(self, doc: Document) -> DocumentVector:
        return self.model.vector(doc)

    def fit_fingerprint(self) -> str:
        extra = (self.model.class_out if self.model.class_out is not None
                 else np.zeros(1))
        return _hash_arrays(self.model.word_vecs, self.model.out_vecs,
                            self.model.doc_vecs, extra)


class ConcatFeature:
    """Concatenation of two features (each block unit-normalized)."""

    def __init__(self, first, second):
        self.first = first
        self.second = second
        self.recipe = f"concat({first.recipe},{second.recipe})"

    def fit(self, train_docs: Sequence[Document], corpus: LabeledCorpus) -> None:
        self.first.fit(train_docs, corpus)
        self.second.fit(train_docs, corpus)

    def vector(self, doc: Document) -> DocumentVector:
        return concat_features(self.first.vector(doc), self.second.vector(doc))

    def fit_fingerprint(self) -> str:
        return hashlib.sha256((self.first.fit_fingerprint()
                               + self.second.fit_fingerprint()).encode()).hexdigest()


class RandomFeature:
    """Seeded random vectors: the no-signal control."""

    def __init__(self, dim: int = 500, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.recipe = f"random:dim={dim}"

    def fit(self, train_docs: Sequence[Document], corpus: LabeledCorpus) -> None:
        pass

    def vector(self, doc: Document) -> DocumentVector:
        digest = hashlib.sha256(f"{self.seed}:{doc.id}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return DocumentVector(rng.normal(size=self.dim), self.recipe)

    def fit_fingerprint(self) -> str:
        return f"random:{self.dim}:{self.seed}"


class OracleFeature:
    """Gold-genre one-hot: the leak probe (weighted F must be 1.0)."""

    recipe = "oracle"

    def __init__(self):
        self.genres: list[str] = []

    def fit(self, train_docs: Sequence[Document], corpus: LabeledCorpus) -> None:
        self.genres = corpus.genres

    def vector(self, doc: Document) -> DocumentVector:
        values = np.zeros(len(self.genres))
        values[self.genres.index(doc.genre)] = 1.0
        return DocumentVector(values, self.recipe)

    def fit_fingerprint(self) -> str:
        return "oracle:" + ",".join(self.genres)
