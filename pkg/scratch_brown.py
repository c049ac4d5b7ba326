"""Scratch: cross-check incremental brown_cluster against a from-scratch
reference (recompute every candidate merge loss via brute-force AMI)."""
import itertools
import numpy as np

from dvlm.corpus import SynthGenre, SynthSpec, synth_corpus
from dvlm.word_classes import (average_mutual_information, bigram_statistics,
                               brown_cluster, _q)


def reference_brown(corpus, num_classes):
    """Windowed agglomerative clustering with per-step brute-force losses."""
    V = len(corpus.vocabulary)
    unigram, bigram = bigram_statistics(corpus.documents, V)
    N = float(unigram.sum())
    B = max(float(bigram.sum()), 1.0)
    order = sorted(range(V), key=lambda w: (-unigram[w], w))
    coo = bigram.tocoo()

    def ami_of(clusters):
        # clusters: list of (sid, set_of_words)
        idx = {}
        for ci, (_, words) in enumerate(clusters):
            for w in words:
                idx[w] = ci
        K = len(clusters)
        p1 = np.zeros(K)
        for ci, (_, words) in enumerate(clusters):
            p1[ci] = sum(unigram[w] for w in words) / N
        p2 = np.zeros((K, K))
        for r, c, v in zip(coo.row, coo.col, coo.data):
            if r in idx and c in idx:
                p2[idx[r], idx[c]] += v / B
        return float(_q(p2, p1[:, None], p1[None, :]).sum())

    sid = 0
    clusters = []
    for w in order[:num_classes]:
        clusters.append((sid, {w}))
        sid += 1
    for w in order[num_classes:]:
        clusters.append((sid, {w}))
        sid += 1
        base = ami_of(clusters)
        cands = []
        for i, j in itertools.combinations(range(len(clusters)), 2):
            merged = [c for k, c in enumerate(clusters) if k not in (i, j)]
            merged.append((10**9, clusters[i][1] | clusters[j][1]))
            loss = base - ami_of(merged)
            sids = tuple(sorted((clusters[i][0], clusters[j][0])))
            cands.append((loss, sids, (i, j)))
        lo = min(c[0] for c in cands)
        tol = 1e-10 * max(1.0, abs(lo))
        best = min((c for c in cands if c[0] <= lo + tol), key=lambda c: c[1])
        i, j = best[2]
        newset = clusters[i][1] | clusters[j][1]
        clusters = [c for k, c in enumerate(clusters) if k not in (i, j)]
        clusters.append((sid, newset))
        sid += 1
    # dense ids by smallest member
    ordered = sorted(clusters, key=lambda c: min(c[1]))
    class_of = np.full(V, -1, dtype=np.int64)
    for cid, (_, words) in enumerate(ordered):
        for w in words:
            class_of[w] = cid
    return class_of


rng = np.random.default_rng(0)
for trial in range(6):
    Vw = int(rng.integers(8, 16))
    vocab = tuple(f"t{i}" for i in range(Vw))
    genres = []
    for g in range(2):
        T = rng.dirichlet(np.ones(Vw) * 0.4, size=Vw)
        init = rng.dirichlet(np.ones(Vw))
        genres.append(SynthGenre(f"g{g}", T, init))
    spec = SynthSpec(vocab=vocab, genres=tuple(genres), docs_per_genre=6,
                     doc_length=(30, 60))
    corpus = synth_corpus(spec, seed=trial)
    V = len(corpus.vocabulary)
    for C in (2, 3, max(2, V // 3)):
        ref = reference_brown(corpus, C)
        fast = brown_cluster(corpus, C).class_of
        match = np.array_equal(ref, fast)
        uni, big = bigram_statistics(corpus.documents, V)
        ami_fast = average_mutual_information(fast, uni, big)
        ami_ref = average_mutual_information(ref, uni, big)
        print(f"trial={trial} V={V} C={C} match={match} "
              f"ami_fast={ami_fast:.6f} ami_ref={ami_ref:.6f}")
        if not match:
            print("  ref :", ref)
            print("  fast:", fast)
