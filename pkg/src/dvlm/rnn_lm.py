"""Simple recurrent language model with class-factorized output.

The hidden state is a logistic-sigmoid recurrence over a projected one-hot
input; the next word is predicted through a word-class softmax and a softmax
over the words of the target's class. Gradients are hand-derived truncated
BPTT, verified against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .corpus import LabeledCorpus
from .factorized import FactorizedOutput
from .numerics import ParamStore, TrainConfig, uniform_init
from .training import DenseSink, SparseSink, fit_language_model
from .word_classes import WordClassMap


@dataclass
class ForwardResult:
    """Per-step prediction distributions and the sequence log-loss."""

    class_probs: np.ndarray        # (T-1, C) float64
    word_probs: list[np.ndarray]   # within the target's class, float64
    log_loss: float


class RnnLm:
    """Parameter set and computations of the simple recurrent LM.

    Tensors: input_proj (d, V) one-hot projection, recurrent (d, d),
    word_out (V, d) per-word output rows, class_out (C, d) class scores.
    """

    family = "rnn"

    def __init__(self, vocab_size: int, hidden_size: int, class_map: WordClassMap,
                 seed: int = 0, precision: str = "fp32",
                 params: ParamStore | None = None):
        if class_map.vocab_size() != vocab_size:
            raise ValueError("class map does not cover the vocabulary")
        self.vocab_size = vocab_size
        self.hidden_size = hidden_size
        self.output = FactorizedOutput(class_map)
        if params is not None:
            self.params = params
        else:
            rng = np.random.default_rng(seed)
            init = uniform_init(rng)
            self.params = ParamStore(precision)
            self.params.add("input_proj", (hidden_size, vocab_size), init)
            self.params.add("recurrent", (hidden_size, hidden_size), init)
            self.params.add("word_out", (vocab_size, hidden_size), init)
            self.params.add("class_out", (class_map.num_classes, hidden_size), init)

    @property
    def class_map(self) -> WordClassMap:
        return self.output.cmap

    @property
    def num_classes(self) -> int:
        return self.output.num_classes

    def _check(self, tokens) -> np.ndarray:
        toks = np.asarray(tokens, dtype=np.int64)
        if toks.size == 0:
            raise ValueError("empty token sequence")
        if toks.min() < 0 or toks.max() >= self.vocab_size:
            raise ValueError(f"token id out of range for vocabulary size "
                             f"{self.vocab_size}")
        return toks

    # -- forward ------------------------------------------------------------

    def _forward(self, toks: np.ndarray, collect: bool) -> ForwardResult:
        p = self.params
        U, H = p["input_proj"], p["recurrent"]
        Q, K = p["word_out"], p["class_out"]
        out = self.output
        T = toks.size
        s = np.zeros(self.hidden_size, dtype=p.dtype)
        total = 0.0
        class_probs = np.empty((T - 1, self.num_classes)) if collect else None
        word_probs: list[np.ndarray] = []
        for i in range(1, T):
            s = expit(U[:, toks[i - 1]] + H @ s)
            target = int(toks[i])
            m = out.members[out.class_of[target]]
            loss, pc, pw = out.step_probs(K @ s, Q[m] @ s, target)
            total += loss
            if collect:
                class_probs[i - 1] = pc
                word_probs.append(pw)
        return ForwardResult(class_probs, word_probs, total)

    def forward(self, tokens) -> ForwardResult:
        toks = self._check(tokens)
        if toks.size < 2:
            raise ValueError("need at least 2 tokens to predict")
        return self._forward(toks, collect=True)

    def loss(self, tokens) -> float:
        toks = self._check(tokens)
        if toks.size < 2:
            raise ValueError("need at least 2 tokens to predict")
        return self._forward(toks, collect=False).log_loss

    def perplexity(self, tokens) -> float:
        toks = self._check(tokens)
        if toks.size < 2:
            raise ValueError("perplexity needs at least 2 tokens")
        return math.exp(self.loss(toks) / (toks.size - 1))

    def full_distributions(self, tokens) -> list[np.ndarray]:
        """Full-vocabulary next-word distribution at every predicted
        position (float64)."""
        toks = self._check(tokens)
        p = self.params
        U, H, Q, K = (p["input_proj"], p["recurrent"], p["word_out"],
                      p["class_out"])
        s = np.zeros(self.hidden_size, dtype=p.dtype)
        dists = []
        for i in range(1, toks.size):
            s = expit(U[:, toks[i - 1]] + H @ s)
            dists.append(self.output.full_distribution(
                K @ s, lambda c: Q[self.output.members[c]] @ s))
        return dists

    # -- gradients ----------------------------------------------------------

    def _backward_window(self, toks, a, b, carry, sink):
        """Forward the window of prediction positions [a, b), then backpropagate
        (gradient into the carry state is dropped: truncation boundary).
        `sink` receives the gradient pieces; returns (loss, new carry)."""
        p = self.params
        U, H = p["input_proj"], p["recurrent"]
        Q, K = p["word_out"], p["class_out"]
        out = self.output
        dtype = p.dtype
        W = b - a
        S = np.empty((W + 1, self.hidden_size), dtype=dtype)
        S[0] = carry
        dz_steps = np.empty((W, self.num_classes), dtype=dtype)
        du_steps: list[tuple[np.ndarray, np.ndarray]] = []  # (members, du)
        total = 0.0
        for j in range(W):
            i = a + j
            S[j + 1] = expit(U[:, toks[i - 1]] + H @ S[j])
            target = int(toks[i])
            m = out.members[out.class_of[target]]
            loss, pc, pw = out.step_probs(K @ S[j + 1], Q[m] @ S[j + 1], target)
            total += loss
            dz, du = out.logit_grads(pc, pw, target)
            dz_steps[j] = dz
            du_steps.append((m, du.astype(dtype)))
        ds_next = np.zeros(self.hidden_size, dtype=dtype)
        for j in reversed(range(W)):
            h = S[j + 1]
            m, du = du_steps[j]
            dh = K.T @ dz_steps[j] + Q[m].T @ du + ds_next
            da = dh * h * (1.0 - h)
            sink.input_col(toks[a + j - 1], da)
            sink.dense("recurrent", np.outer(da, S[j]))
            ds_next = H.T @ da
        sink.dense("class_out", dz_steps.T @ S[1:])
        for j in range(W):
            m, du = du_steps[j]
            sink.word_rows(m, np.outer(du, S[j + 1]))
        return total, S[W]

    def gradients(self, tokens, bptt_span: int | None = None) -> ParamStore:
        """Dense gradients of the sequence loss (full BPTT unless a span is
        given); used for verification, not the training loop."""
        toks = self._check(tokens)
        if toks.size < 2:
            raise ValueError("need at least 2 tokens to predict")
        grads = self.params.zeros_like()
        sink = DenseSink(grads, in_name="input_proj", word_name="word_out")
        span = bptt_span or toks.size
        carry = np.zeros(self.hidden_size, dtype=self.params.dtype)
        for a in range(1, toks.size, span):
            _, carry = self._backward_window(toks, a, min(a + span, toks.size),
                                             carry, sink)
        return grads

    def train_sequence(self, tokens, lr: float, bptt_span: int, clip: float,
                       wrt: set[str] | None = None) -> float:
        """One truncated-BPTT SGD pass over the sequence (one parameter update
        per window); only trainable tensors move. Returns the sequence loss
        under the parameters each window was forwarded with."""
        toks = self._check(tokens)
        if toks.size < 2:
            return 0.0
        allowed = set(self.params.trainable_names())
        if wrt is not None:
            allowed &= wrt
        carry = np.zeros(self.hidden_size, dtype=self.params.dtype)
        total = 0.0
        for a in range(1, toks.size, bptt_span):
            sink = SparseSink(allowed, in_name="input_proj", word_name="word_out")
            loss, carry = self._backward_window(
                toks, a, min(a + bptt_span, toks.size), carry, sink)
            total += loss
            sink.apply(self.params, lr, clip)
        return total

    # -- persistence --------------------------------------------------------

    def snapshot(self) -> dict:
        return {n: self.params[n].copy() for n in self.params.names()}

    def restore(self, snap: dict) -> None:
        for n, v in snap.items():
            self.params[n][...] = v

    def clone(self) -> "RnnLm":
        return RnnLm(self.vocab_size, self.hidden_size, self.class_map,
                     precision=self.params.precision, params=self.params.clone())

    def cast(self, precision: str) -> "RnnLm":
        return RnnLm(self.vocab_size, self.hidden_size, self.class_map,
                     precision=precision, params=self.params.cast(precision))

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = {
            "model": self.family,
            "vocab_size": self.vocab_size,
            "hidden_size": self.hidden_size,
            "num_classes": self.num_classes,
            "class_of": [int(c) for c in self.class_map.class_of],
            "extra": extra or {},
        }
        self.params.save(path, meta)

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> tuple["RnnLm", dict]:
        store, meta = ParamStore.load(path)
        if meta.get("model") != cls.family:
            raise ValueError(f"{path}: checkpoint is not a {cls.family} model")
        cmap = WordClassMap(np.asarray(meta["class_of"], dtype=np.int64),
                            meta["num_classes"])
        model = cls(meta["vocab_size"], meta["hidden_size"], cmap, params=store)
        return model, meta.get("extra", {})


# -- module-level operations ------------------------------------------------


def rnn_forward(model: RnnLm, tokens) -> ForwardResult:
    return model.forward(tokens)


def perplexity(model, tokens) -> float:
    return model.perplexity(tokens)


def rnn_train(corpus: LabeledCorpus, cfg: TrainConfig, hidden_size: int,
              class_map: WordClassMap) -> RnnLm:
    """Train a parent model on all corpus documents."""
    if class_map.vocab_size() != len(corpus.vocabulary):
        raise ValueError("class map does not cover the corpus vocabulary")
    model = RnnLm(len(corpus.vocabulary), hidden_size, class_map,
                  seed=cfg.seed, precision=cfg.precision)
    fit_language_model(model, [d.tokens for d in corpus.documents], cfg,
                       name="rnn-lm")
    return model
