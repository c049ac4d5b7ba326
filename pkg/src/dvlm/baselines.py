"""Baseline document features: n-gram TF-IDF and a native distributed-memory
paragraph-vector model with the standard hyperparameter grid search.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .corpus import Document, LabeledCorpus
from .factorized import FactorizedOutput
from .vectors import DocumentVector, unit_normalize
from .word_classes import WordClassMap, brown_cluster

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# N-gram TF-IDF


class NgramIndex:
    """Order-n term index fit on training documents only: the top_k n-grams
    by document frequency (ties broken lexicographically)."""

    def __init__(self, n: int, top_k: int, terms: dict[tuple[int, ...], int],
                 doc_freq: np.ndarray, num_docs: int):
        self.n = n
        self.top_k = top_k
        self.terms = terms
        self.doc_freq = doc_freq
        self.num_docs = num_docs
        self.recipe = f"tfidf:n={n}:top={top_k}"

    @classmethod
    def fit(cls, docs: Sequence[Document], n: int, top_k: int) -> "NgramIndex":
        if n < 1:
            raise ValueError("n-gram order must be >= 1")
        df: dict[tuple[int, ...], int] = {}
        for doc in docs:
            seen = set()
            toks = doc.tokens
            for i in range(len(toks) - n + 1):
                seen.add(toks[i:i + n])
            for term in seen:
                df[term] = df.get(term, 0) + 1
        if top_k > len(df):
            log.warning("requested top %d terms but only %d distinct %d-grams; "
                        "keeping all", top_k, len(df), n)
        selected = sorted(df, key=lambda t: (-df[t], t))[:top_k]
        terms = {t: i for i, t in enumerate(selected)}
        doc_freq = np.array([df[t] for t in selected], dtype=np.float64)
        return cls(n, top_k, terms, doc_freq, len(docs))

    @property
    def dim(self) -> int:
        return len(self.terms)

    def transform(self, doc: Document) -> DocumentVector:
        """tf(term, doc) * ln(N / df(term)), L2-normalized."""
        tf = np.zeros(self.dim)
        toks = doc.tokens
        n = self.n
        for i in range(len(toks) - n + 1):
            col = self.terms.get(toks[i:i + n])
            if col is not None:
                tf[col] += 1.0
        idf = np.log(self.num_docs / self.doc_freq)
        return DocumentVector(unit_normalize(tf * idf), self.recipe)


def ngram_tfidf(corpus: LabeledCorpus, n: int, top_k: int
                ) -> dict[str, DocumentVector]:
    """Fit the index on the whole corpus and weight every document (the
    fold-aware path fits on training folds and transforms both)."""
    index = NgramIndex.fit(corpus.documents, n, top_k)
    return {doc.id: index.transform(doc) for doc in corpus.documents}


# ---------------------------------------------------------------------------
# PV-DM


@dataclass(frozen=True)
class PvdmConfig:
    """Distributed-memory paragraph-vector hyperparameters."""

    dim: int = 500
    window: int = 5
    min_frequency: int = 0
    negative_samples: int = 10
    subsample_threshold: float = 0.0
    learning_rate: float = 0.025
    epochs: int = 20
    seed: int = 0
    softmax_classes: int = 64  # class-factorized fallback when negative_samples == 0

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


FINAL_LEARNING_RATE = 1e-4


class PvdmModel:
    """Paragraph vectors trained to predict the next word from the mean of
    the document vector and the preceding window of word vectors.

    With negative sampling the objective is the usual sigmoid contrast
    against unigram^(3/4) noise words; with zero negatives it falls back to
    a full softmax factorized by word classes.
    """

    def __init__(self, cfg: PvdmConfig, vocab_size: int,
                 class_map: WordClassMap | None = None):
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.class_map = class_map
        self.recipe = f"pvdm:dim={cfg.dim}"
        self._fit_docs: dict[str, int] = {}
        rng = np.random.default_rng([cfg.seed, 101])
        bound = 0.5 / cfg.dim
        self.word_vecs = rng.uniform(-bound, bound, (vocab_size, cfg.dim))
        self.out_vecs = np.zeros((vocab_size, cfg.dim))
        self.doc_vecs: np.ndarray | None = None
        self.keep: np.ndarray | None = None
        self.keep_prob: np.ndarray | None = None
        self.noise_cdf: np.ndarray | None = None
        self.output: FactorizedOutput | None = None
        self.class_out: np.ndarray | None = None
        if cfg.negative_samples == 0:
            if class_map is None:
                raise ValueError("negative_samples=0 needs a word-class map "
                                 "for the factorized softmax fallback")
            self.output = FactorizedOutput(class_map)
            self.class_out = np.zeros((class_map.num_classes, cfg.dim))

    # -- table construction --------------------------------------------------

    def _prepare(self, docs: Sequence[Document]) -> None:
        counts = np.zeros(self.vocab_size)
        for doc in docs:
            np.add.at(counts, np.asarray(doc.tokens, dtype=np.int64), 1.0)
        self.keep = counts >= max(self.cfg.min_frequency, 1)
        total_kept = counts[self.keep].sum()
        freq = np.zeros(self.vocab_size)
        if total_kept > 0:
            freq[self.keep] = counts[self.keep] / total_kept
        t = self.cfg.subsample_threshold
        keep_prob = np.ones(self.vocab_size)
        if t > 0:
            high = self.keep & (freq > t)
            keep_prob[high] = np.sqrt(t / freq[high])
        self.keep_prob = keep_prob
        noise = np.where(self.keep, counts, 0.0) ** 0.75
        total = noise.sum()
        self.noise_cdf = np.cumsum(noise / total) if total > 0 else None

    def _filtered(self, doc: Document, rng: np.random.Generator) -> np.ndarray:
        toks = np.asarray(doc.tokens, dtype=np.int64)
        toks = toks[self.keep[toks]]
        if self.cfg.subsample_threshold > 0 and toks.size:
            toks = toks[rng.random(toks.size) < self.keep_prob[toks]]
        return toks

    # -- training ------------------------------------------------------------

    def _lr_at(self, epoch: int) -> float:
        if self.cfg.epochs == 1:
            return self.cfg.learning_rate
        frac = epoch / (self.cfg.epochs - 1)
        return self.cfg.learning_rate + (FINAL_LEARNING_RATE
                                         - self.cfg.learning_rate) * frac

    def _train_position(self, dvec: np.ndarray, ctx_words: np.ndarray,
                        target: int, lr: float, rng: np.random.Generator,
                        train_words: bool) -> float:
        """One prediction: mean-combine the document vector with the context
        word vectors, update toward the target. Returns the position loss."""
        m = 1 + ctx_words.size
        ctx = dvec.copy()
        if ctx_words.size:
            ctx += self.word_vecs[ctx_words].sum(axis=0)
        ctx /= m
        if self.cfg.negative_samples > 0:
            candidates = [target]
            while len(candidates) < 1 + self.cfg.negative_samples:
                draw = int(np.searchsorted(self.noise_cdf, rng.random()))
                if draw != target:
                    candidates.append(draw)
            rows = np.asarray(candidates, dtype=np.int64)
            labels = np.zeros(rows.size)
            labels[0] = 1.0
            outs = self.out_vecs[rows]
            scores = expit(outs @ ctx)
            gains = (labels - scores) * lr
            grad_ctx = gains @ outs
            loss = -(np.log(max(scores[0], 1e-12))
                     + np.log(np.maximum(1.0 - scores[1:], 1e-12)).sum())
            if train_words:
                self.out_vecs[rows] += np.outer(gains, ctx)
        else:
            out = self.output
            cls = int(out.class_of[target])
            members = out.members[cls]
            loss, pc, pw = out.step_probs(self.class_out @ ctx,
                                          self.out_vecs[members] @ ctx, target)
            dz, du = out.logit_grads(pc, pw, target)
            grad_ctx = -lr * (self.class_out.T @ dz
                              + self.out_vecs[members].T @ du)
            if train_words:
                self.class_out -= lr * np.outer(dz, ctx)
                self.out_vecs[members] -= lr * np.outer(du, ctx)
        share = grad_ctx / m
        dvec += share
        if train_words and ctx_words.size:
            np.add.at(self.word_vecs, ctx_words, share)
        return float(loss)

    def _run_doc(self, dvec: np.ndarray, toks: np.ndarray, lr: float,
                 rng: np.random.Generator, train_words: bool) -> float:
        w = self.cfg.window
        total = 0.0
        for i in range(toks.size):
            ctx_words = toks[max(0, i - w):i]
            total += self._train_position(dvec, ctx_words, int(toks[i]), lr,
                                          rng, train_words)
        return total

    def fit(self, docs: Sequence[Document]) -> list[float]:
        """Train word, output, and per-document vectors; returns the mean
        position loss per epoch."""
        docs = sorted(docs, key=lambda d: d.id)
        self._fit_docs = {doc.id: i for i, doc in enumerate(docs)}
        self._prepare(docs)
        rng = np.random.default_rng([self.cfg.seed, 211])
        bound = 0.5 / self.cfg.dim
        self.doc_vecs = rng.uniform(-bound, bound, (len(docs), self.cfg.dim))
        epoch_losses = []
        for epoch in range(self.cfg.epochs):
            lr = self._lr_at(epoch)
            total = 0.0
            positions = 0
            for doc in docs:
                toks = self._filtered(doc, rng)
                if toks.size == 0:
                    continue
                total += self._run_doc(self.doc_vecs[self._fit_docs[doc.id]],
                                       toks, lr, rng, train_words=True)
                positions += toks.size
            epoch_losses.append(total / max(positions, 1))
        return epoch_losses

    def vector(self, doc: Document) -> DocumentVector:
        """Vector of a fitted document, or an inferred vector for an unseen
        one (word and output vectors frozen)."""
        if doc.id in self._fit_docs:
            values = self.doc_vecs[self._fit_docs[doc.id]]
            return DocumentVector(values.copy(), self.recipe)
        return self.infer(doc)

    def infer(self, doc: Document) -> DocumentVector:
        rng = np.random.default_rng([self.cfg.seed, 307])
        bound = 0.5 / self.cfg.dim
        dvec = rng.uniform(-bound, bound, self.cfg.dim)
        any_tokens = False
        for epoch in range(self.cfg.epochs):
            toks = self._filtered(doc, rng)
            if toks.size == 0:
                continue
            any_tokens = True
            self._run_doc(dvec, toks, self._lr_at(epoch), rng, train_words=False)
        if not any_tokens:
            log.warning("pvdm: document %s has no trainable tokens; "
                        "zero vector", doc.id)
            return DocumentVector(np.zeros(self.cfg.dim), self.recipe)
        return DocumentVector(dvec, self.recipe)


def pvdm_train(corpus: LabeledCorpus, cfg: PvdmConfig,
               class_map: WordClassMap | None = None
               ) -> dict[str, DocumentVector]:
    """Train PV-DM on the whole corpus; per-document vectors keyed by id."""
    if cfg.negative_samples == 0 and class_map is None:
        classes = min(cfg.softmax_classes, len(corpus.vocabulary))
        class_map = brown_cluster(corpus, classes)
    model = PvdmModel(cfg, len(corpus.vocabulary), class_map)
    model.fit(corpus.documents)
    return {doc.id: model.vector(doc) for doc in corpus.documents}


# ---------------------------------------------------------------------------
# Grid search

GRID_WINDOWS = (5, 10, 15, 20)
GRID_MIN_FREQUENCIES = (0, 5, 10, 20)
GRID_NEGATIVE_SAMPLES = (0, 10, 20)
GRID_SUBSAMPLING = (0.0, 5e-5)


def pvdm_grid_lattice(base: PvdmConfig) -> list[PvdmConfig]:
    """All combinations of the standard tuning grid applied to a base
    config (4 windows x 4 min frequencies x 3 negative counts x 2
    sub-sampling thresholds = 96 points)."""
    out = []
    for window, min_freq, neg, sub in itertools.product(
            GRID_WINDOWS, GRID_MIN_FREQUENCIES, GRID_NEGATIVE_SAMPLES,
            GRID_SUBSAMPLING):
        out.append(replace(base, window=window, min_frequency=min_freq,
                           negative_samples=neg, subsample_threshold=sub))
    return out


def tuning_sample(corpus: LabeledCorpus, fraction: float, seed: int
                  ) -> list[Document]:
    """Stratified-by-genre closed-set sample used to score grid points."""
    rng = np.random.default_rng([seed, 401])
    sample: list[Document] = []
    by_genre: dict[str, list[Document]] = {}
    for doc in corpus.documents:
        by_genre.setdefault(doc.genre, []).append(doc)
    for genre in sorted(by_genre):
        docs = by_genre[genre]
        take = max(1, round(fraction * len(docs)))
        order = rng.permutation(len(docs))[:take]
        sample.extend(docs[i] for i in sorted(order))
    return sample


def pvdm_grid_search(corpus: LabeledCorpus, grid: Sequence[PvdmConfig],
                     tuning_fraction: float,
                     evaluator: Callable[[dict[str, DocumentVector],
                                          Sequence[Document]], float],
                     seed: int = 0,
                     class_map: WordClassMap | None = None
                     ) -> tuple[PvdmConfig, list[tuple[PvdmConfig, float]]]:
    """Evaluate every lattice point by classification score on the tuning
    sample; returns the argmax (ties go to the first point in lattice order)
    plus all scores."""
    if not grid:
        raise ValueError("empty hyperparameter grid")
    sample = tuning_sample(corpus, tuning_fraction, seed)
    if class_map is None and any(c.negative_samples == 0 for c in grid):
        classes = min(grid[0].softmax_classes, len(corpus.vocabulary))
        class_map = brown_cluster(corpus, classes)
    results: list[tuple[PvdmConfig, float]] = []
    best: tuple[PvdmConfig, float] | None = None
    for cfg in grid:
        vectors = pvdm_train(corpus, cfg, class_map)
        score = evaluator(vectors, sample)
        results.append((cfg, score))
        if best is None or score > best[1]:
            best = (cfg, score)
        log.info("grid point window=%d min_freq=%d neg=%d sub=%g -> %.4f",
                 cfg.window, cfg.min_frequency, cfg.negative_samples,
                 cfg.subsample_threshold, score)
    return best[0], results
