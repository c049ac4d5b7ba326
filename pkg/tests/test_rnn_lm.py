import math

import numpy as np
import pytest

from dvlm.corpus import synth_corpus, synth_preset
from dvlm.numerics import TrainConfig, finite_diff_check, sgd_update
from dvlm.rnn_lm import RnnLm, perplexity, rnn_forward, rnn_train
from dvlm.word_classes import WordClassMap, brown_cluster


def balanced_map(vocab_size, num_classes):
    return WordClassMap(np.arange(vocab_size) % num_classes, num_classes)


def random_map(vocab_size, num_classes, seed=0):
    rng = np.random.default_rng(seed)
    class_of = np.r_[np.arange(num_classes),
                     rng.integers(0, num_classes, vocab_size - num_classes)]
    return WordClassMap(np.sort(class_of), num_classes)


def test_distributions_are_normalized():
    model = RnnLm(20, 7, random_map(20, 4), seed=1, precision="fp64")
    toks = np.random.default_rng(0).integers(0, 20, size=15)
    result = rnn_forward(model, toks)
    assert np.all(np.abs(result.class_probs.sum(axis=1) - 1.0) < 1e-9)
    for pw in result.word_probs:
        assert abs(pw.sum() - 1.0) < 1e-9


def test_zero_params_give_uniform_class_distribution():
    model = RnnLm(12, 5, balanced_map(12, 3), seed=0, precision="fp64")
    for name in model.params.names():
        model.params[name][...] = 0.0
    result = model.forward([0, 5, 2, 7])
    assert np.allclose(result.class_probs, 1.0 / 3.0, atol=1e-12)


def test_hand_computed_forward_loss():
    # 2-word vocabulary, 1 class, scalar weights: pencil-and-paper pass
    model = RnnLm(2, 1, WordClassMap(np.zeros(2, dtype=int), 1),
                  precision="fp64")
    p = model.params
    p["input_proj"][...] = [[0.3, -0.2]]
    p["recurrent"][...] = [[0.5]]
    p["word_out"][...] = [[0.7], [-0.4]]
    p["class_out"][...] = [[0.9]]
    toks = [0, 1, 0]

    def sig(x):
        return 1.0 / (1.0 + math.exp(-x))

    s1 = sig(0.3)
    u = (0.7 * s1, -0.4 * s1)
    loss1 = -math.log(math.exp(u[1]) / (math.exp(u[0]) + math.exp(u[1])))
    s2 = sig(-0.2 + 0.5 * s1)
    u2 = (0.7 * s2, -0.4 * s2)
    loss2 = -math.log(math.exp(u2[0]) / (math.exp(u2[0]) + math.exp(u2[1])))
    expected = loss1 + loss2  # class factor contributes log(1) = 0

    assert model.loss(toks) == pytest.approx(expected, abs=1e-12)
    assert model.perplexity(toks) == pytest.approx(math.exp(expected / 2),
                                                   abs=1e-12)


def test_uniform_model_perplexity_equals_vocab():
    V, C = 12, 3  # equal-sized classes: P(w) = (1/C) * (C/V) = 1/V
    model = RnnLm(V, 4, balanced_map(V, C), precision="fp64")
    for name in model.params.names():
        model.params[name][...] = 0.0
    toks = np.random.default_rng(1).integers(0, V, size=30)
    assert model.perplexity(toks) == pytest.approx(V, rel=1e-9)


def test_perplexity_at_least_one():
    for seed in range(3):
        model = RnnLm(15, 6, random_map(15, 5, seed), seed=seed)
        toks = np.random.default_rng(seed).integers(0, 15, size=20)
        assert model.perplexity(toks) >= 1.0


def test_full_vocabulary_normalization():
    model = RnnLm(30, 8, random_map(30, 6), seed=2, precision="fp64")
    toks = np.random.default_rng(3).integers(0, 30, size=12)
    for dist in model.full_distributions(toks):
        assert abs(dist.sum() - 1.0) < 1e-8


def test_gradients_match_finite_differences():
    model = RnnLm(25, 10, random_map(25, 5, 1), seed=4, precision="fp64")
    toks = np.random.default_rng(5).integers(0, 25, size=18)
    assert finite_diff_check(model, toks, eps=1e-5, samples=200, seed=0) < 1e-4


def test_truncated_gradients_match_finite_differences_per_window():
    # a single window spanning the sequence is the full gradient
    model = RnnLm(12, 5, random_map(12, 3, 2), seed=6, precision="fp64")
    toks = np.random.default_rng(7).integers(0, 12, size=9)
    full = model.gradients(toks)
    one_window = model.gradients(toks, bptt_span=len(toks))
    for name in model.params.names():
        assert np.array_equal(full[name], one_window[name])


def test_train_sequence_single_window_equals_dense_update():
    model = RnnLm(14, 6, random_map(14, 4, 3), seed=8, precision="fp64")
    toks = np.random.default_rng(9).integers(0, 14, size=11).tolist()
    dense = model.gradients(toks)
    via_sgd = model.clone()
    sgd_update(via_sgd.params, dense, lr=0.07, clip=5.0)
    via_train = model.clone()
    via_train.train_sequence(toks, lr=0.07, bptt_span=len(toks), clip=5.0)
    for name in model.params.names():
        assert np.allclose(via_train.params[name], via_sgd.params[name],
                           atol=1e-14)


def test_token_range_checked():
    model = RnnLm(5, 3, balanced_map(5, 1))
    with pytest.raises(ValueError, match="out of range"):
        model.loss([0, 7])
    with pytest.raises(ValueError, match="empty"):
        model.loss([])
    with pytest.raises(ValueError):
        model.perplexity([2])


@pytest.fixture(scope="module")
def tiny_corpus():
    return synth_corpus(synth_preset(vocab_size=16, docs_per_genre=6,
                                     doc_length=(40, 70), successors=4),
                        seed=13)


def test_rnn_train_zero_epochs_returns_initialized(tiny_corpus):
    cmap = brown_cluster(tiny_corpus, 4)
    cfg = TrainConfig(epochs=0, seed=5)
    trained = rnn_train(tiny_corpus, cfg, 8, cmap)
    fresh = RnnLm(len(tiny_corpus.vocabulary), 8, cmap, seed=5,
                  precision=cfg.precision)
    for name in trained.params.names():
        assert np.array_equal(trained.params[name], fresh.params[name])


def test_rnn_train_deterministic(tiny_corpus):
    cmap = brown_cluster(tiny_corpus, 4)
    cfg = TrainConfig(epochs=2, seed=5, learning_rate=0.1)
    a = rnn_train(tiny_corpus, cfg, 8, cmap)
    b = rnn_train(tiny_corpus, cfg, 8, cmap)
    for name in a.params.names():
        assert np.array_equal(a.params[name], b.params[name])


def test_rnn_train_beats_uniform(tiny_corpus):
    cmap = brown_cluster(tiny_corpus, 4)
    cfg = TrainConfig(epochs=2, seed=5, learning_rate=0.1)
    model = rnn_train(tiny_corpus, cfg, 8, cmap)
    V = len(tiny_corpus.vocabulary)
    ppls = [model.perplexity(d.tokens) for d in tiny_corpus.documents]
    assert np.mean(ppls) < V


def test_memorizes_repeated_sentence():
    sentence = [3, 1, 4, 1, 5, 2, 1]
    model = RnnLm(6, 12, balanced_map(6, 2), seed=0, precision="fp64")
    for _ in range(300):
        model.train_sequence(sentence, lr=0.5, bptt_span=len(sentence),
                             clip=5.0)
    assert model.perplexity(sentence) < 1.5


def test_checkpoint_round_trip(tmp_path):
    model = RnnLm(10, 4, random_map(10, 3, 4), seed=7)
    path = tmp_path / "rnn.ckpt"
    model.save(path, extra={"note": "test"})
    loaded, extra = RnnLm.from_checkpoint(path)
    assert extra == {"note": "test"}
    assert loaded.hidden_size == model.hidden_size
    assert np.array_equal(loaded.class_map.class_of, model.class_map.class_of)
    for name in model.params.names():
        assert np.array_equal(loaded.params[name], model.params[name])
