"""Per-document adaptation of a parent language model and vectorization of
the adapted parameters into document vectors.

The parent is cloned, a freeze mask selects the parameter groups that may
update, and the clone is briefly retrained on the single document. The
adapted tensors are then vectorized: the recurrent and class matrices for the
simple RNN (column-major), or the unit-normalized bias blocks for the LSTM.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .corpus import Document
from .lstm_lm import GATE_BIAS_NAMES, LstmLm
from .numerics import TrainConfig
from .rnn_lm import RnnLm
from .vectors import DocumentVector, concat_features, unit_normalize, vec_colmajor

log = logging.getLogger(__name__)

LanguageModel = Union[RnnLm, LstmLm]

# mask shorthand for the four LSTM gate/cell bias vectors
MASK_ALIASES = {"lstm_biases": GATE_BIAS_NAMES}

RNN_ADAPT_MASK_NAMES = ("recurrent", "class_out")
LSTM_ADAPT_MASK_NAMES = ("sigmoid_b", "lstm_biases", "class_b")


@dataclass(frozen=True)
class FreezeMask:
    """Names of the parameter groups an adaptation session may update;
    everything else stays frozen."""

    trainable: tuple[str, ...]

    def __init__(self, trainable: Iterable[str]):
        object.__setattr__(self, "trainable", tuple(trainable))
        if not self.trainable:
            raise ValueError("freeze mask must name at least one group")

    def resolve(self, model: LanguageModel) -> set[str]:
        names: set[str] = set()
        for group in self.trainable:
            expanded = MASK_ALIASES.get(group, (group,))
            for name in expanded:
                if name not in model.params:
                    raise ValueError(f"unknown parameter group {name!r} for "
                                     f"{model.family} model")
                names.add(name)
        return names


def default_mask(family: str) -> FreezeMask:
    if family == "rnn":
        return FreezeMask(RNN_ADAPT_MASK_NAMES)
    if family == "lstm":
        return FreezeMask(LSTM_ADAPT_MASK_NAMES)
    raise ValueError(f"unknown model family {family!r}")


def adapt(parent: LanguageModel, doc: Document, mask: FreezeMask,
          cfg: TrainConfig) -> LanguageModel:
    """Retrain a clone of the parent on one document, updating only the mask
    groups; returns the best-seen checkpoint (the parent itself if no epoch
    improved the document perplexity)."""
    toks = np.asarray(doc.tokens, dtype=np.int64)
    if toks.size and (toks.min() < 0 or toks.max() >= parent.vocab_size):
        raise ValueError(f"document {doc.id!r} is not tokenized under the "
                         f"parent vocabulary")
    adapted = parent.clone()
    trainable = mask.resolve(adapted)
    for name in adapted.params.names():
        adapted.params.set_trainable(name, name in trainable)
    if cfg.epochs == 0:
        return adapted
    if toks.size < 2:
        log.warning("document %s too short to adapt", doc.id)
        return adapted

    parent_ppl = adapted.perplexity(toks)
    best_ppl = parent_ppl
    best = {n: adapted.params[n].copy() for n in trainable}
    for _ in range(cfg.epochs):
        adapted.train_sequence(toks, cfg.learning_rate, cfg.bptt_span,
                               cfg.clip_threshold, wrt=trainable)
        ppl = adapted.perplexity(toks)
        if ppl < best_ppl:
            best_ppl = ppl
            best = {n: adapted.params[n].copy() for n in trainable}
    if best_ppl >= parent_ppl:
        log.warning("adaptation did not improve perplexity on %s "
                    "(parent %.3f, best %.3f); keeping best seen",
                    doc.id, parent_ppl, best_ppl)
    for name, value in best.items():
        adapted.params[name][...] = value
    return adapted


def dv_rnn(adapted: RnnLm, parts: str = "hk") -> DocumentVector:
    """Column-major vectorization of the adapted recurrent and/or class
    matrices, concatenated in that order."""
    if not isinstance(adapted, RnnLm):
        raise TypeError("dv_rnn needs an adapted RNN model")
    h = vec_colmajor(adapted.params["recurrent"]).astype(np.float64)
    k = vec_colmajor(adapted.params["class_out"]).astype(np.float64)
    if parts == "h":
        return DocumentVector(h, "dv_rnn_h")
    if parts == "k":
        return DocumentVector(k, "dv_rnn_k")
    if parts == "hk":
        return DocumentVector(np.concatenate([h, k]), "dv_rnn_hk")
    raise ValueError(f"unknown dv_rnn parts {parts!r}")


def dv_lstm(adapted: LstmLm, part: str = "dm") -> DocumentVector:
    """Unit-normalized bias concatenations of the adapted LSTM.

    Parts: "bm" = the four gate/cell bias blocks; "ba" = those plus the
    sigmoid-layer biases; "bc" = the class biases; "dm" = the normalized
    "ba" block followed by the normalized class biases.
    """
    if not isinstance(adapted, LstmLm):
        raise TypeError("dv_lstm needs an adapted LSTM model")
    p = adapted.params
    gate_blocks = [unit_normalize(p[name]) for name in GATE_BIAS_NAMES]
    bm = np.concatenate(gate_blocks)
    ba = np.concatenate(gate_blocks + [unit_normalize(p["sigmoid_b"])])
    bc = unit_normalize(p["class_b"])
    if part == "bm":
        return DocumentVector(bm, "dv_lstm_bm")
    if part == "ba":
        return DocumentVector(ba, "dv_lstm_ba")
    if part == "bc":
        return DocumentVector(bc, "dv_lstm_bc")
    if part == "dm":
        return DocumentVector(np.concatenate([unit_normalize(ba), bc]),
                              "dv_lstm_dm")
    raise ValueError(f"unknown dv_lstm part {part!r}")


__all__ = [
    "FreezeMask", "adapt", "default_mask", "dv_rnn", "dv_lstm",
    "DocumentVector", "concat_features", "unit_normalize", "vec_colmajor",
    "RNN_ADAPT_MASK_NAMES", "LSTM_ADAPT_MASK_NAMES",
]
