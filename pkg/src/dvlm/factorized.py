"""Class-factorized output layer shared by both language models:
P(w | h) = P(class(w) | h) * P(w | class(w), h), each factor softmax-
normalized. Probabilities are computed in at least float64 regardless of the
model's training precision (extended precision passes through untouched).
"""

from __future__ import annotations

import numpy as np

from .word_classes import WordClassMap


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits)
    dt = np.longdouble if logits.dtype == np.longdouble else np.float64
    z = logits.astype(dt)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


class FactorizedOutput:
    """Precomputed class membership tables for the factorized softmax."""

    def __init__(self, cmap: WordClassMap):
        self.cmap = cmap
        self.class_of = cmap.class_of
        self.members = [np.asarray(m, dtype=np.int64) for m in cmap.members]
        pos = np.zeros(cmap.vocab_size(), dtype=np.int64)
        for m in self.members:
            pos[m] = np.arange(m.size)
        self.pos_in_class = pos

    @property
    def num_classes(self) -> int:
        return self.cmap.num_classes

    def step_probs(self, class_logits: np.ndarray, word_logits: np.ndarray,
                   target: int) -> tuple[np.floating, np.ndarray, np.ndarray]:
        """Negative log-probability of `target` plus the two factor
        distributions (class distribution, within-target-class word
        distribution)."""
        cls = int(self.class_of[target])
        pc = softmax_probs(class_logits)
        pw = softmax_probs(word_logits)
        loss = -(np.log(pc[cls]) + np.log(pw[self.pos_in_class[target]]))
        return loss, pc, pw

    def logit_grads(self, pc: np.ndarray, pw: np.ndarray, target: int
                    ) -> tuple[np.ndarray, np.ndarray]:
        """Softmax-minus-one-hot gradients for both factors."""
        dz = pc.copy()
        dz[int(self.class_of[target])] -= 1.0
        du = pw.copy()
        du[int(self.pos_in_class[target])] -= 1.0
        return dz, du

    def step_distributions(self, class_logits: np.ndarray,
                           word_logits_for: "callable"
                           ) -> tuple[np.ndarray, list[np.ndarray]]:
        """Class distribution and the within-class word distribution of every
        class (word logits supplied per class via `word_logits_for`)."""
        pc = softmax_probs(class_logits)
        per_class = [softmax_probs(word_logits_for(c))
                     for c in range(self.num_classes)]
        return pc, per_class

    def full_distribution(self, class_logits: np.ndarray,
                          word_logits_for: "callable") -> np.ndarray:
        """P(w) over the whole vocabulary: product of the two factors."""
        pc, per_class = self.step_distributions(class_logits, word_logits_for)
        out = np.zeros(self.class_of.size, dtype=np.float64)
        for c, m in enumerate(self.members):
            out[m] = pc[c] * per_class[c]
        return out
