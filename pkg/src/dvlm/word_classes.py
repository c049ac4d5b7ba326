"""Brown clustering of the vocabulary into word classes, and the
class-frequency document feature.

The clustering is the windowed agglomerative variant: a working set of
`num_classes` clusters is seeded with the most frequent words; the remaining
words are inserted one at a time (by frequency), and after each insertion the
pair of clusters whose merge loses the least average mutual information is
merged. Cluster-level AMI uses bigram probabilities against fixed unigram
marginals, so merges and insertions only touch the affected rows and the
pairwise loss table updates in O(K^2) per step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .corpus import Document, LabeledCorpus
from .vectors import DocumentVector, unit_normalize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WordClassMap:
    """Total partition of the vocabulary into dense class ids 0..C-1."""

    class_of: np.ndarray  # (V,) int class id per word id
    num_classes: int

    def __post_init__(self) -> None:
        class_of = np.asarray(self.class_of, dtype=np.int64)
        object.__setattr__(self, "class_of", class_of)
        present = np.unique(class_of)
        if present.size != self.num_classes or present[0] != 0 \
                or present[-1] != self.num_classes - 1:
            raise ValueError("class ids must be dense 0..C-1 with no empty class")

    @property
    def members(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.num_classes)]
        for word, cls in enumerate(self.class_of):
            out[int(cls)].append(word)
        return out

    def vocab_size(self) -> int:
        return int(self.class_of.size)

    def save(self, path: str | Path, words: Sequence[str]) -> None:
        """One `<word>\\t<class-id>` line per word, ordered by word id."""
        lines = [f"{words[i]}\t{int(c)}" for i, c in enumerate(self.class_of)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, words: Sequence[str]) -> "WordClassMap":
        index = {w: i for i, w in enumerate(words)}
        class_of = np.full(len(words), -1, dtype=np.int64)
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            word, cid = line.split("\t")
            class_of[index[word]] = int(cid)
        if np.any(class_of < 0):
            raise ValueError(f"{path}: class map does not cover the vocabulary")
        return cls(class_of, int(class_of.max()) + 1)


def bigram_statistics(documents: Sequence[Document], vocab_size: int
                      ) -> tuple[np.ndarray, sparse.csr_matrix]:
    """Unigram counts and within-document consecutive bigram counts."""
    unigram = np.zeros(vocab_size, dtype=np.float64)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    for doc in documents:
        toks = np.asarray(doc.tokens, dtype=np.int64)
        np.add.at(unigram, toks, 1.0)
        if toks.size >= 2:
            rows.append(toks[:-1])
            cols.append(toks[1:])
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        data = np.ones(r.size, dtype=np.float64)
        bigram = sparse.coo_matrix((data, (r, c)), shape=(vocab_size, vocab_size)).tocsr()
    else:
        bigram = sparse.csr_matrix((vocab_size, vocab_size), dtype=np.float64)
    return unigram, bigram


def _q(p: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Pointwise AMI contribution p * log(p / (left * right)), zero at p=0."""
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros(np.broadcast(p, left, right).shape)
    mask = p > 0
    if np.any(mask):
        lp = np.broadcast_to(left, out.shape)
        rp = np.broadcast_to(right, out.shape)
        pm = np.broadcast_to(p, out.shape)[mask]
        out[mask] = pm * (np.log(pm) - np.log(lp[mask]) - np.log(rp[mask]))
    return out


def average_mutual_information(class_of: np.ndarray, unigram: np.ndarray,
                               bigram: sparse.csr_matrix) -> float:
    """AMI of a partition, computed directly from the word-level statistics
    (the independent route used to cross-check the incremental clustering)."""
    class_of = np.asarray(class_of, dtype=np.int64)
    C = int(class_of.max()) + 1
    N = float(unigram.sum())
    B = float(bigram.sum())
    p1 = np.zeros(C)
    np.add.at(p1, class_of, unigram / N)
    coo = bigram.tocoo()
    p2 = np.zeros((C, C))
    np.add.at(p2, (class_of[coo.row], class_of[coo.col]), coo.data / B)
    return float(_q(p2, p1[:, None], p1[None, :]).sum())


class _ClusterState:
    """Working-set state for the incremental algorithm. Slot arrays have
    capacity num_classes + 1; `sid` is a creation counter used to break
    exact ties deterministically."""

    def __init__(self, capacity: int):
        self.cap = capacity
        self.p1 = np.zeros(capacity)
        self.p2 = np.zeros((capacity, capacity))
        self.q = np.zeros((capacity, capacity))
        self.sv = np.zeros(capacity)
        self.loss = np.full((capacity, capacity), np.inf)
        self.active = np.zeros(capacity, dtype=bool)
        self.sid = np.full(capacity, -1, dtype=np.int64)
        self.members: list[list[int]] = [[] for _ in range(capacity)]
        self.next_sid = 0

    def free_slot(self) -> int:
        return int(np.flatnonzero(~self.active)[0])

    def pair_losses_vs(self, t: int) -> np.ndarray:
        """Fresh L(c, t) for all active c != t (O(K^2))."""
        act = self.active.copy()
        act[t] = False
        idx = np.flatnonzero(act)
        p1m = self.p1[idx] + self.p1[t]
        # membership of e in the merged pair only matters for e in {c, t}
        row = self.p2[np.ix_(idx, np.flatnonzero(self.active))] \
            + self.p2[t, self.active][None, :]
        col = self.p2[np.ix_(np.flatnonzero(self.active), idx)] \
            + self.p2[self.active, t][:, None]
        e_act = np.flatnonzero(self.active)
        qm_out = _q(row, p1m[:, None], self.p1[e_act][None, :])   # (c, e)
        qm_in = _q(col, self.p1[e_act][:, None], p1m[None, :])    # (e, c)
        s_sum = qm_out.sum(axis=1) + qm_in.sum(axis=0)
        # remove e = c and e = t columns, then add the merged self term
        pos_of = {int(e): k for k, e in enumerate(e_act)}
        c_pos = np.array([pos_of[int(c)] for c in idx], dtype=np.int64)
        t_pos = pos_of[t]
        s_sum -= qm_out[np.arange(idx.size), c_pos] + qm_in[c_pos, np.arange(idx.size)]
        s_sum -= qm_out[:, t_pos] + qm_in[t_pos, :]
        p_self = (self.p2[idx, idx] + self.p2[idx, t] + self.p2[t, idx]
                  + self.p2[t, t])
        s_sum += _q(p_self, p1m, p1m)
        losses = (self.sv[idx] + self.sv[t]
                  - self.q[idx, t] - self.q[t, idx] - s_sum)
        out = np.full(self.cap, np.inf)
        out[idx] = losses
        return out


def _qm_vs(state: _ClusterState, x: int) -> np.ndarray:
    """qm(cd, x) + qm(x, cd) for all pairs (c, d): the merged-pair terms
    against a single cluster x, as a (cap, cap) matrix."""
    p1m = state.p1[:, None] + state.p1[None, :]
    out_p = state.p2[:, x][:, None] + state.p2[:, x][None, :]
    in_p = state.p2[x, :][:, None] + state.p2[x, :][None, :]
    return _q(out_p, p1m, state.p1[x]) + _q(in_p, state.p1[x], p1m)


def brown_cluster(corpus: LabeledCorpus, num_classes: int,
                  documents: Sequence[Document] | None = None) -> WordClassMap:
    """Cluster the corpus vocabulary into `num_classes` word classes.

    Bigram statistics come from `documents` when given (fold-restricted
    fitting), otherwise from the whole corpus.
    """
    V = len(corpus.vocabulary)
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if num_classes > V:
        raise ValueError(f"vocabulary ({V} types) smaller than num_classes "
                         f"({num_classes})")
    unigram, bigram = bigram_statistics(
        corpus.documents if documents is None else documents, V)
    N = float(unigram.sum())
    B = max(float(bigram.sum()), 1.0)
    order = sorted(range(V), key=lambda w: (-unigram[w], w))

    if num_classes == V:
        class_of = np.arange(V, dtype=np.int64)
        return WordClassMap(class_of, V)

    csr = bigram
    csc = bigram.tocsc()
    state = _ClusterState(num_classes + 1)
    word_slot = np.full(V, -1, dtype=np.int64)

    def insert_word(w: int, slot: int) -> None:
        state.active[slot] = True
        state.sid[slot] = state.next_sid
        state.next_sid += 1
        state.members[slot] = [w]
        state.p1[slot] = unigram[w] / N
        state.p2[slot, :] = 0.0
        state.p2[:, slot] = 0.0
        row = csr.getrow(w)
        for j, v in zip(row.indices, row.data):
            if j == w:
                state.p2[slot, slot] += v / B
            elif word_slot[j] >= 0:
                state.p2[slot, word_slot[j]] += v / B
        col = csc.getcol(w)
        for i, v in zip(col.indices, col.data):
            if i != w and word_slot[i] >= 0:
                state.p2[word_slot[i], slot] += v / B
        word_slot[w] = slot

    def refresh_cluster(t: int) -> None:
        """Recompute q rows/cols, sv, and the loss column for cluster t."""
        act = np.flatnonzero(state.active)
        state.q[t, :] = 0.0
        state.q[:, t] = 0.0
        state.q[t, act] = _q(state.p2[t, act], state.p1[t], state.p1[act])
        state.q[act, t] = _q(state.p2[act, t], state.p1[act], state.p1[t])
        state.sv[t] = state.q[t, act].sum() + state.q[act, t].sum() - state.q[t, t]
        fresh = state.pair_losses_vs(t)
        state.loss[t, :] = np.inf
        state.loss[:, t] = np.inf
        others = act[act != t]
        state.loss[others, t] = fresh[others]

    def merge_best() -> None:
        act = np.flatnonzero(state.active)
        sub = state.loss[np.ix_(act, act)]
        best = sub.min()
        # mathematical ties show up with ~1e-16 float noise; treat
        # near-equal losses as tied and break by lowest (id, id) pair
        tol = 1e-10 * max(1.0, abs(best))
        where = np.argwhere(sub <= best + tol)

        def key(rc):
            a, b = int(act[rc[0]]), int(act[rc[1]])
            sa, sb = int(state.sid[a]), int(state.sid[b])
            return (min(sa, sb), max(sa, sb))
        r, c = min(where, key=key)
        a, b = int(act[r]), int(act[c])

        # update losses of untouched pairs before mutating the tables
        dq = (state.q[:, a] + state.q[a, :] + state.q[:, b] + state.q[b, :])
        p_out = state.p2[:, a] + state.p2[:, b]        # p'(c, m)
        p_in = state.p2[a, :] + state.p2[b, :]         # p'(m, c)
        p1m = state.p1[a] + state.p1[b]
        dq_new = (_q(p_out, state.p1, p1m) + _q(p_in, p1m, state.p1))
        ds = dq_new - dq                               # per-cluster s delta
        qm_a = _qm_vs(state, a)
        qm_b = _qm_vs(state, b)
        pair_out = p_out[:, None] + p_out[None, :]
        pair_in = p_in[:, None] + p_in[None, :]
        p1_pair = state.p1[:, None] + state.p1[None, :]
        qm_m = _q(pair_out, p1_pair, p1m) + _q(pair_in, p1m, p1_pair)
        state.loss += ds[:, None] + ds[None, :] - (qm_m - qm_a - qm_b)

        # fold b into a
        state.p2[a, :] += state.p2[b, :]
        state.p2[:, a] += state.p2[:, b]
        state.p2[b, :] = 0.0
        state.p2[:, b] = 0.0
        state.p1[a] += state.p1[b]
        state.p1[b] = 0.0
        state.sv += ds
        state.members[a] = state.members[a] + state.members[b]
        state.members[b] = []
        word_slot[np.asarray(state.members[a], dtype=np.int64)] = a
        state.active[b] = False
        state.sid[b] = -1
        state.sid[a] = state.next_sid
        state.next_sid += 1
        state.q[b, :] = 0.0
        state.q[:, b] = 0.0
        state.loss[b, :] = np.inf
        state.loss[:, b] = np.inf
        refresh_cluster(a)

    # seed with the most frequent words
    for slot, w in enumerate(order[:num_classes]):
        insert_word(w, slot)
    act = np.flatnonzero(state.active)
    for t in act:
        state.q[t, act] = _q(state.p2[t, act], state.p1[t], state.p1[act])
    for t in act:
        state.sv[t] = (state.q[t, act].sum() + state.q[act, t].sum()
                       - state.q[t, t])
    for t in act:
        fresh = state.pair_losses_vs(int(t))
        others = act[act < t]
        state.loss[others, t] = fresh[others]

    inserted = num_classes
    for w in order[num_classes:]:
        slot = state.free_slot()
        # loss updates for existing pairs: new q terms minus merged-pair terms
        insert_word(w, slot)
        act = np.flatnonzero(state.active)
        prev = act[act != slot]
        dq = np.zeros(state.cap)
        dq[prev] = (_q(state.p2[prev, slot], state.p1[prev], state.p1[slot])
                    + _q(state.p2[slot, prev], state.p1[slot], state.p1[prev]))
        qm_t = _qm_vs(state, slot)
        state.loss += dq[:, None] + dq[None, :] - qm_t
        state.sv += dq
        refresh_cluster(slot)
        inserted += 1
        if inserted % 2000 == 0:
            log.info("brown clustering: %d/%d words inserted", inserted, V)
        merge_best()

    # dense class ids ordered by smallest member word id
    slots = np.flatnonzero(state.active)
    ordered = sorted(slots, key=lambda s: min(state.members[s]))
    class_of = np.full(V, -1, dtype=np.int64)
    for cid, slot in enumerate(ordered):
        class_of[np.asarray(state.members[slot], dtype=np.int64)] = cid
    return WordClassMap(class_of, num_classes)


def class_tf_vector(doc: Document, cmap: WordClassMap, weighting: str = "tf",
                    class_idf: np.ndarray | None = None) -> DocumentVector:
    """Per-class term frequency of one document, L2-normalized.

    With `weighting="tfidf"` the counts are scaled by a caller-supplied
    idf vector (fit on training documents only).
    """
    if weighting not in ("tf", "tfidf"):
        raise ValueError(f"unknown weighting {weighting!r}")
    counts = np.zeros(cmap.num_classes)
    if doc.tokens:
        np.add.at(counts, cmap.class_of[np.asarray(doc.tokens, dtype=np.int64)], 1.0)
    else:
        log.warning("class_tf_vector: empty document %s", doc.id)
    if weighting == "tfidf":
        if class_idf is None:
            raise ValueError("tfidf weighting needs a class_idf vector")
        counts = counts * class_idf
    recipe = f"class_tf:c={cmap.num_classes}:{weighting}"
    return DocumentVector(unit_normalize(counts), recipe)
