"""Shared parent-training loop for both language models: seeded epoch
shuffling, a held-out validation slice, and the standard halving schedule
(revert to the best checkpoint on a failed epoch, halve the rate, stop after
two consecutive failures)."""

from __future__ import annotations

import logging
import math
from typing import Protocol, Sequence

import numpy as np

from .numerics import TrainConfig

log = logging.getLogger(__name__)

TokenSeq = Sequence[int]


class SequenceModel(Protocol):
    def loss(self, tokens: TokenSeq) -> float: ...

    def train_sequence(self, tokens: TokenSeq, lr: float, bptt_span: int,
                       clip: float, wrt: set[str] | None = None) -> float: ...

    def snapshot(self) -> dict: ...

    def restore(self, snap: dict) -> None: ...


def corpus_perplexity(model, sequences: Sequence[TokenSeq]) -> float:
    """exp(total log-loss / total predicted tokens) over several sequences."""
    total = 0.0
    preds = 0
    for seq in sequences:
        if len(seq) < 2:
            continue
        total += model.loss(seq)
        preds += len(seq) - 1
    if preds == 0:
        raise ValueError("no predicted positions: sequences too short")
    return math.exp(total / preds)


class DenseSink:
    """Accumulates window gradients into a dense ParamStore."""

    def __init__(self, grads, in_name: str, word_name: str):
        self.grads = grads
        self.in_name = in_name
        self.word_name = word_name

    def dense(self, name: str, piece: np.ndarray) -> None:
        self.grads[name][...] += piece

    def input_col(self, col: int, vec: np.ndarray) -> None:
        self.grads[self.in_name][:, col] += vec

    def word_rows(self, rows: np.ndarray, piece: np.ndarray) -> None:
        self.grads[self.word_name][rows] += piece


class SparseSink:
    """Accumulates window gradients sparsely (touched columns of the input
    projection, touched rows of the word output) and applies one clipped SGD
    step per window, matching sgd_update on the dense gradient up to float
    summation order."""

    def __init__(self, allowed: set[str], in_name: str, word_name: str):
        self.allowed = allowed
        self.in_name = in_name
        self.word_name = word_name
        self.dense_parts: dict[str, np.ndarray] = {}
        self.cols: dict[int, np.ndarray] = {}
        self.rows: dict[int, np.ndarray] = {}
        self.row_ids: dict[int, np.ndarray] = {}

    def dense(self, name: str, piece: np.ndarray) -> None:
        if name not in self.allowed:
            return
        if name in self.dense_parts:
            self.dense_parts[name] += piece
        else:
            self.dense_parts[name] = piece

    def input_col(self, col: int, vec: np.ndarray) -> None:
        if self.in_name not in self.allowed:
            return
        col = int(col)
        if col in self.cols:
            self.cols[col] += vec
        else:
            self.cols[col] = vec.copy()

    def word_rows(self, rows: np.ndarray, piece: np.ndarray) -> None:
        if self.word_name not in self.allowed:
            return
        key = int(rows[0])  # member sets are disjoint: first row identifies the class
        if key in self.rows:
            self.rows[key] += piece
        else:
            self.rows[key] = piece.copy()
            self.row_ids[key] = rows

    def apply(self, params, lr: float, clip: float) -> None:
        for name, g in self.dense_parts.items():
            scale = _clip_scale(float(np.linalg.norm(g)), clip)
            params[name][...] -= (lr * scale) * g
        if self.cols:
            norm = math.sqrt(sum(float(v @ v) for v in self.cols.values()))
            scale = lr * _clip_scale(norm, clip)
            tensor = params[self.in_name]
            for col, vec in self.cols.items():
                tensor[:, col] -= scale * vec
        if self.rows:
            norm = math.sqrt(sum(float((m * m).sum()) for m in self.rows.values()))
            scale = lr * _clip_scale(norm, clip)
            tensor = params[self.word_name]
            for key, mat in self.rows.items():
                tensor[self.row_ids[key]] -= scale * mat


def _clip_scale(norm: float, clip: float) -> float:
    if np.isfinite(clip) and norm > clip:
        return clip / norm
    return 1.0


def fit_language_model(model: SequenceModel, sequences: Sequence[TokenSeq],
                       cfg: TrainConfig, name: str = "lm") -> list[dict]:
    """Train in place; returns one history record per completed epoch."""
    if cfg.epochs == 0:
        return []
    sequences = [tuple(s) for s in sequences if len(s) >= 2]
    if not sequences:
        raise ValueError("no trainable sequences (all shorter than 2 tokens)")

    split_rng = np.random.default_rng([cfg.seed, 29])
    order = split_rng.permutation(len(sequences))
    n_val = max(1, round(0.05 * len(sequences))) if len(sequences) >= 2 else 0
    val = [sequences[i] for i in order[:n_val]]
    train = [sequences[i] for i in order[n_val:]] or list(val)

    shuffle_rng = np.random.default_rng([cfg.seed, 17])
    lr = cfg.learning_rate
    best = model.snapshot()
    best_ppl = corpus_perplexity(model, val)
    fails = 0
    history: list[dict] = []
    for epoch in range(cfg.epochs):
        epoch_loss = 0.0
        for i in shuffle_rng.permutation(len(train)):
            epoch_loss += model.train_sequence(train[i], lr, cfg.bptt_span,
                                               cfg.clip_threshold)
        if not math.isfinite(epoch_loss):
            raise RuntimeError(f"{name}: training diverged at epoch {epoch}")
        ppl = corpus_perplexity(model, val)
        if ppl < best_ppl:
            best_ppl = ppl
            best = model.snapshot()
            fails = 0
        else:
            model.restore(best)
            lr *= cfg.lr_decay
            fails += 1
        history.append({"epoch": epoch, "lr": lr, "val_perplexity": best_ppl})
        log.info("%s epoch %d: val ppl %.3f (lr %.4g)", name, epoch, best_ppl, lr)
        if fails >= 2:
            break
    model.restore(best)
    return history
