import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvlm.corpus import (CorpusError, Document, SynthGenre, SynthSpec, TokenPolicy,
                         Vocabulary, filter_documents, load_corpus,
                         load_corpus_cache, merge_genres, save_corpus,
                         synth_corpus, synth_preset)


def write_manifest(tmp_path, entries):
    lines = []
    for name, genre, text in entries:
        (tmp_path / name).write_text(text, encoding="utf-8")
        lines.append(f"{name}\t{genre}")
    manifest = tmp_path / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def test_load_corpus_counts_match_hand_tally(tmp_path):
    manifest = write_manifest(tmp_path, [
        ("a.txt", "g1", "the cat sat"),
        ("b.txt", "g1", "the dog sat"),
        ("c.txt", "g2", "the end"),
    ])
    corpus = load_corpus(manifest, TokenPolicy(min_count=1))
    vocab = corpus.vocabulary
    assert len(corpus) == 3
    counts = {vocab.words[i]: c for i, c in enumerate(vocab.counts)}
    assert counts == {"<unk>": 0, "</s>": 3, "the": 3, "sat": 2,
                      "cat": 1, "dog": 1, "end": 1}
    # frequency order with lexicographic ties, specials first
    assert vocab.words[:4] == ["<unk>", "</s>", "the", "sat"]


def test_load_corpus_missing_file_names_path(tmp_path):
    manifest = tmp_path / "manifest.tsv"
    manifest.write_text("gone.txt\tg1\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="gone.txt"):
        load_corpus(manifest)


def test_load_corpus_excludes_empty_document(tmp_path, caplog):
    manifest = write_manifest(tmp_path, [
        ("a.txt", "g1", "some words here"),
        ("empty.txt", "g1", "   \n  "),
        ("b.txt", "g2", "other words here"),
    ])
    with caplog.at_level("WARNING"):
        corpus = load_corpus(manifest, TokenPolicy(min_count=1))
    assert len(corpus) == 2
    assert "empty" in caplog.text


def test_tokenizer_inserts_sentence_markers():
    policy = TokenPolicy()
    words = policy.tokenize("Hello there. Second sentence!")
    assert words == ["hello", "there", ".", "</s>", "second", "sentence",
                     "!", "</s>"]


def test_min_count_maps_rare_words_to_unk(tmp_path):
    manifest = write_manifest(tmp_path, [
        ("a.txt", "g1", "common common common rare"),
    ])
    corpus = load_corpus(manifest, TokenPolicy(min_count=2))
    vocab = corpus.vocabulary
    assert "rare" not in vocab.index
    doc = corpus.documents[0]
    assert doc.tokens[3] == vocab.unk_id
    assert vocab.counts[vocab.unk_id] == 1


def make_toy_corpus(word_counts, genres=None):
    """Documents with the given raw word counts (content words 'w')."""
    genres = genres or ["g"] * len(word_counts)
    records = []
    policy = TokenPolicy(min_count=1)
    for i, (count, genre) in enumerate(zip(word_counts, genres)):
        words = tuple(["w"] * count + [policy.eos_token])
        records.append((f"doc{i:02d}", genre, words, count))
    vocab = Vocabulary.build((w for _, _, w, _ in records), policy)
    docs = [Document(i, g, w, vocab.map(w), r) for i, g, w, r in records]
    from dvlm.corpus import LabeledCorpus
    return LabeledCorpus(docs, vocab, policy)


def test_filter_documents_min_words():
    corpus = make_toy_corpus([50, 250, 300, 10, 500])
    out = filter_documents(corpus, min_words=200)
    assert len(out) == 3
    assert [d.raw_word_count for d in out.documents] == [250, 300, 500]


def test_filter_documents_identity():
    corpus = make_toy_corpus([50, 250, 300])
    out = filter_documents(corpus, min_words=0, per_genre_cap=None,
                           drop_genres=())
    assert out.fingerprint() == corpus.fingerprint()


def test_filter_documents_idempotent():
    corpus = make_toy_corpus([50, 250, 300, 10, 500, 220, 270],
                             genres=["a", "a", "a", "b", "b", "b", "b"])
    once = filter_documents(corpus, min_words=100, per_genre_cap=2,
                            drop_genres=())
    twice = filter_documents(once, min_words=100, per_genre_cap=2,
                             drop_genres=())
    assert once.fingerprint() == twice.fingerprint()


def test_filter_documents_cap_keeps_id_order():
    corpus = make_toy_corpus([300, 300, 300], genres=["a", "a", "a"])
    out = filter_documents(corpus, per_genre_cap=2)
    assert [d.id for d in out.documents] == ["doc00", "doc01"]


def test_filter_documents_empty_result_fatal():
    corpus = make_toy_corpus([50, 60])
    with pytest.raises(CorpusError):
        filter_documents(corpus, min_words=100)


def test_filter_rebuilds_vocabulary():
    corpus = make_toy_corpus([300, 10])
    # the short doc's removal drops its tokens from the rebuilt vocabulary
    out = filter_documents(corpus, min_words=100)
    assert sum(out.vocabulary.counts) == 301  # 300 words + one eos


def test_merge_genres_sums_counts():
    corpus = make_toy_corpus([10, 20, 30], genres=["a", "b", "c"])
    out = merge_genres(corpus, {"a": "ab", "b": "ab"})
    assert out.genre_counts == {"ab": 2, "c": 1}


def test_merge_genres_identity():
    corpus = make_toy_corpus([10, 20], genres=["a", "b"])
    out = merge_genres(corpus, {"a": "a"})
    assert out.fingerprint() == corpus.fingerprint()


def test_merge_genres_errors():
    corpus = make_toy_corpus([10, 20], genres=["a", "b"])
    with pytest.raises(CorpusError):
        merge_genres(corpus, {"zz": "x"})
    with pytest.raises(CorpusError):
        merge_genres(corpus, {"a": ""})


def two_genre_spec(p_aa=0.9, p_ba=0.5, docs=50):
    vocab = ("a", "b")
    genre_a = SynthGenre("A", np.array([[p_aa, 1 - p_aa], [p_ba, 1 - p_ba]]),
                         np.array([0.5, 0.5]))
    genre_b = SynthGenre("B", np.array([[0.1, 0.9], [p_ba, 1 - p_ba]]),
                         np.array([0.5, 0.5]))
    return SynthSpec(vocab=vocab, genres=(genre_a, genre_b),
                     docs_per_genre=docs, doc_length=(80, 140))


def test_synth_corpus_deterministic():
    spec = two_genre_spec()
    c1 = synth_corpus(spec, seed=7)
    c2 = synth_corpus(spec, seed=7)
    assert c1.fingerprint() == c2.fingerprint()
    c3 = synth_corpus(spec, seed=8)
    assert c1.fingerprint() != c3.fingerprint()


def test_synth_corpus_bigram_rates():
    spec = two_genre_spec(p_aa=0.9)
    corpus = synth_corpus(spec, seed=3)
    vocab = corpus.vocabulary
    a_id = vocab.index["a"]
    for genre, expected in (("A", 0.9), ("B", 0.1)):
        follow_a = 0
        total_a = 0
        for doc in corpus.documents:
            if doc.genre != genre:
                continue
            toks = doc.tokens
            for i in range(len(toks) - 1):
                if toks[i] == a_id and toks[i + 1] != vocab.eos_id:
                    total_a += 1
                    follow_a += toks[i + 1] == a_id
        assert abs(follow_a / total_a - expected) < 0.05


def test_synth_corpus_needs_two_genres():
    spec = two_genre_spec()
    single = SynthSpec(vocab=spec.vocab, genres=spec.genres[:1],
                       docs_per_genre=5)
    with pytest.raises(CorpusError):
        synth_corpus(single, seed=0)


def test_synth_preset_invariants():
    corpus = synth_corpus(synth_preset(docs_per_genre=10), seed=5)
    assert sum(corpus.genre_counts.values()) == len(corpus)
    size = len(corpus.vocabulary)
    for doc in corpus.documents:
        assert max(doc.tokens) < size
        assert doc.tokens  # nonempty
        assert doc.words[-1] == corpus.policy.eos_token


def test_corpus_cache_round_trip(tmp_path):
    corpus = synth_corpus(synth_preset(docs_per_genre=4), seed=2)
    path = tmp_path / "corpus.json"
    save_corpus(corpus, path, fingerprint="abc123")
    loaded, fp = load_corpus_cache(path)
    assert fp == "abc123"
    assert loaded.fingerprint() == corpus.fingerprint()
    payload = json.loads(path.read_text())
    assert payload["version"] == 1
    # byte-stable re-export
    save_corpus(loaded, tmp_path / "again.json", fingerprint="abc123")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_subset_preserves_vocabulary():
    corpus = synth_corpus(synth_preset(docs_per_genre=4), seed=2)
    ids = [d.id for d in corpus.documents[:3]]
    sub = corpus.subset(ids)
    assert len(sub) == 3
    assert sub.vocabulary is corpus.vocabulary
    with pytest.raises(CorpusError):
        corpus.subset(["nope"])


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_synth_corpus_invariants_property(seed):
    corpus = synth_corpus(two_genre_spec(docs=3), seed=seed)
    assert sum(corpus.genre_counts.values()) == len(corpus)
    for doc in corpus.documents:
        assert all(0 <= t < len(corpus.vocabulary) for t in doc.tokens)
