import itertools

import numpy as np
import pytest

from dvlm.corpus import (Document, LabeledCorpus, SynthGenre, SynthSpec,
                         TokenPolicy, Vocabulary, synth_corpus, synth_preset)
from dvlm.word_classes import (WordClassMap, average_mutual_information,
                               bigram_statistics, brown_cluster,
                               class_tf_vector)


def corpus_from_streams(streams, genres=None):
    policy = TokenPolicy(min_count=1)
    genres = genres or ["g"] * len(streams)
    records = [(f"d{i:02d}", g, tuple(s), len(s))
               for i, (s, g) in enumerate(zip(streams, genres))]
    vocab = Vocabulary.build((w for _, _, w, _ in records), policy)
    docs = [Document(i, g, w, vocab.map(w), r) for i, g, w, r in records]
    return LabeledCorpus(docs, vocab, policy)


def reference_brown(corpus, num_classes):
    """From-scratch windowed clustering: every candidate merge scored by
    brute-force AMI recomputation. Only viable for tiny vocabularies."""
    V = len(corpus.vocabulary)
    unigram, bigram = bigram_statistics(corpus.documents, V)
    N = float(unigram.sum())
    B = max(float(bigram.sum()), 1.0)
    order = sorted(range(V), key=lambda w: (-unigram[w], w))
    coo = bigram.tocoo()

    def ami_of(clusters):
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
        with np.errstate(divide="ignore", invalid="ignore"):
            contrib = np.where(p2 > 0,
                               p2 * (np.log(p2) - np.log(p1[:, None])
                                     - np.log(p1[None, :])), 0.0)
        return float(contrib.sum())

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
            merged.append((10 ** 9, clusters[i][1] | clusters[j][1]))
            loss = base - ami_of(merged)
            sids = tuple(sorted((clusters[i][0], clusters[j][0])))
            cands.append((loss, sids, (i, j)))
        lo = min(c[0] for c in cands)
        tol = 1e-10 * max(1.0, abs(lo))
        _, _, (i, j) = min((c for c in cands if c[0] <= lo + tol),
                           key=lambda c: c[1])
        newset = clusters[i][1] | clusters[j][1]
        clusters = [c for k, c in enumerate(clusters) if k not in (i, j)]
        clusters.append((sid, newset))
        sid += 1
    ordered = sorted(clusters, key=lambda c: min(c[1]))
    class_of = np.full(V, -1, dtype=np.int64)
    for cid, (_, words) in enumerate(ordered):
        for w in words:
            class_of[w] = cid
    return class_of


def test_singleton_classes_when_num_classes_equals_vocab():
    corpus = corpus_from_streams([("a", "b", "c", "a")])
    V = len(corpus.vocabulary)
    cmap = brown_cluster(corpus, V)
    assert cmap.num_classes == V
    assert sorted(cmap.class_of.tolist()) == list(range(V))


def test_two_class_toy_recovers_contexts():
    # {a, b} always precede {x, y}: exhaustive AMI over all 2-partitions
    # confirms the grouping is optimal
    streams = []
    pairs = [("a", "x"), ("b", "y"), ("a", "y"), ("b", "x")] * 6
    for i in range(0, len(pairs), 4):
        flat = [w for pair in pairs[i:i + 4] for w in pair]
        streams.append(tuple(flat))
    corpus = corpus_from_streams(streams)
    cmap = brown_cluster(corpus, 2)
    vocab = corpus.vocabulary
    a, b, x, y = (vocab.index[w] for w in "abxy")
    assert cmap.class_of[a] == cmap.class_of[b]
    assert cmap.class_of[x] == cmap.class_of[y]
    assert cmap.class_of[a] != cmap.class_of[x]

    # exhaustive check: no 2-partition of the vocabulary beats the result
    V = len(vocab)
    unigram, bigram = bigram_statistics(corpus.documents, V)
    achieved = average_mutual_information(cmap.class_of, unigram, bigram)
    best = -np.inf
    for bits in range(1, 2 ** (V - 1)):
        part = np.array([(bits >> i) & 1 for i in range(V)], dtype=np.int64)
        if part.min() == part.max():
            continue
        best = max(best, average_mutual_information(part, unigram, bigram))
    assert achieved >= best - 1e-12


@pytest.mark.parametrize("trial", range(4))
def test_incremental_matches_reference(trial):
    rng = np.random.default_rng(trial)
    Vw = int(rng.integers(8, 14))
    vocab = tuple(f"t{i}" for i in range(Vw))
    genres = []
    for g in range(2):
        trans = rng.dirichlet(np.ones(Vw) * 0.4, size=Vw)
        init = rng.dirichlet(np.ones(Vw))
        genres.append(SynthGenre(f"g{g}", trans, init))
    spec = SynthSpec(vocab=vocab, genres=tuple(genres), docs_per_genre=5,
                     doc_length=(30, 60))
    corpus = synth_corpus(spec, seed=trial + 50)
    for C in (2, 4):
        ref = reference_brown(corpus, C)
        fast = brown_cluster(corpus, C).class_of
        assert np.array_equal(ref, fast), f"C={C}"


def test_partition_invariant_and_beats_random():
    corpus = synth_corpus(synth_preset(docs_per_genre=10), seed=9)
    V = len(corpus.vocabulary)
    C = 6
    cmap = brown_cluster(corpus, C)
    members = cmap.members
    assert sum(len(m) for m in members) == V
    assert all(members)  # no empty class
    unigram, bigram = bigram_statistics(corpus.documents, V)
    achieved = average_mutual_information(cmap.class_of, unigram, bigram)
    rng = np.random.default_rng(0)
    for _ in range(5):
        rand = np.concatenate([np.arange(C), rng.integers(0, C, V - C)])
        rng.shuffle(rand)
        assert achieved >= average_mutual_information(rand, unigram, bigram)


def test_brown_cluster_validates_class_count():
    corpus = corpus_from_streams([("a", "b", "a")])
    with pytest.raises(ValueError):
        brown_cluster(corpus, len(corpus.vocabulary) + 1)
    with pytest.raises(ValueError):
        brown_cluster(corpus, 1)


def test_class_map_export_round_trip(tmp_path):
    corpus = synth_corpus(synth_preset(docs_per_genre=5), seed=1)
    cmap = brown_cluster(corpus, 4)
    path = tmp_path / "classes.tsv"
    cmap.save(path, corpus.vocabulary.words)
    lines = path.read_text().splitlines()
    assert len(lines) == len(corpus.vocabulary)
    assert lines[0].split("\t")[0] == corpus.vocabulary.words[0]
    loaded = WordClassMap.load(path, corpus.vocabulary.words)
    assert np.array_equal(loaded.class_of, cmap.class_of)


def test_class_map_rejects_gaps():
    with pytest.raises(ValueError):
        WordClassMap(np.array([0, 2, 2]), 3)  # class 1 empty


def test_class_tf_one_hot():
    corpus = corpus_from_streams([("a", "b", "c", "d", "e")])
    doc = corpus.documents[0]
    cmap = WordClassMap(np.arange(len(corpus.vocabulary)),
                        len(corpus.vocabulary))
    single = Document("one", "g", ("c",), corpus.vocabulary.map(("c",)), 1)
    vec = class_tf_vector(single, cmap)
    hot = corpus.vocabulary.index["c"]
    expected = np.zeros(len(corpus.vocabulary))
    expected[hot] = 1.0
    assert np.allclose(vec.values, expected)


def test_class_tf_hand_counts():
    # 4 classes, counts {2, 0, 1, 1} -> vector proportional to (2, 0, 1, 1)
    class_of = np.array([0, 1, 2, 3])
    cmap = WordClassMap(class_of, 4)
    doc = Document("d", "g", ("w",) * 4, (0, 0, 2, 3), 4)
    vec = class_tf_vector(doc, cmap)
    expected = np.array([2.0, 0.0, 1.0, 1.0])
    expected /= np.linalg.norm(expected)
    assert np.allclose(vec.values, expected, atol=1e-12)
    # entries before normalization sum to the token count
    scale = np.linalg.norm([2.0, 0.0, 1.0, 1.0])
    assert vec.values.sum() * scale == pytest.approx(4.0, abs=1e-9)


def test_class_tf_empty_doc_warns(caplog):
    cmap = WordClassMap(np.array([0, 1]), 2)
    doc = Document("d", "g", (), (), 0)
    with caplog.at_level("WARNING"):
        vec = class_tf_vector(doc, cmap)
    assert np.allclose(vec.values, 0.0)
    assert "empty" in caplog.text


def test_class_tf_tfidf_needs_idf():
    cmap = WordClassMap(np.array([0, 1]), 2)
    doc = Document("d", "g", ("w",), (0,), 1)
    with pytest.raises(ValueError):
        class_tf_vector(doc, cmap, weighting="tfidf")
