import time, logging
logging.basicConfig(level=logging.ERROR)
import numpy as np
from dvlm.corpus import SynthGenre, SynthSpec, synth_corpus
from dvlm.numerics import TrainConfig
from dvlm.features import AdaptationEngine, TfidfFeature
from dvlm.evaluate import (ClassifierConfig, stratified_folds, train_classifier,
                           weighted_fscore, _as_matrix)


def subset_chain_spec(num_genres=2, vocab_size=24, docs_per_genre=50,
                      doc_length=(120, 200), succ=6, mass=0.8, seed=1234):
    V = vocab_size
    vocab = tuple(f"w{i:03d}" for i in range(V))
    rng = np.random.default_rng(seed)
    genres = []
    for g in range(num_genres):
        trans = np.full((V, V), (1.0 - mass) / V)
        for i in range(V):
            subset = rng.choice(V, size=succ, replace=False)
            trans[i, subset] += mass / succ
        initial = np.full(V, 1.0 / V)
        genres.append(SynthGenre(f"genre{g}", trans, initial))
    return SynthSpec(vocab=vocab, genres=tuple(genres),
                     docs_per_genre=docs_per_genre, doc_length=doc_length)


spec = subset_chain_spec()
corpus = synth_corpus(spec, seed=7)
folds = stratified_folds(corpus, 5, seed=11)
docs_by_id = {d.id: d for d in corpus.documents}
parent_cfg = TrainConfig(learning_rate=0.1, epochs=4, bptt_span=5, seed=3)

adapt_variants = {
    "lr.05e5": TrainConfig(learning_rate=0.05, epochs=5, bptt_span=5, seed=3),
    "lr.1e8": TrainConfig(learning_rate=0.1, epochs=8, bptt_span=5, seed=3),
}

for aname, adapt_cfg in adapt_variants.items():
    t0 = time.time()
    engine = AdaptationEngine("lstm", parent_cfg, adapt_cfg, num_classes=10)
    tfidf = TfidfFeature(5, 10000)
    fold_vecs = []  # per fold: (train dm X, y, test dm X, ytest, tf train/test)
    for test_ids in folds:
        test_set = set(test_ids)
        train_docs = [d for d in corpus.documents if d.id not in test_set]
        test_docs = [docs_by_id[i] for i in test_ids]
        engine.fit(train_docs, corpus)
        tfidf.fit(train_docs, corpus)
        entry = {}
        for part in ("dm", "bm", "bc"):
            entry[f"{part}_train"] = [engine.vector(d, part) for d in train_docs]
            entry[f"{part}_test"] = [engine.vector(d, part) for d in test_docs]
        entry["tf_train"] = [tfidf.vector(d) for d in train_docs]
        entry["tf_test"] = [tfidf.vector(d) for d in test_docs]
        entry["y_train"] = [d.genre for d in train_docs]
        entry["y_test"] = [d.genre for d in test_docs]
        fold_vecs.append(entry)
    print(f"[{aname}] extraction {time.time()-t0:.0f}s")
    for l2 in (1.0, 0.1, 0.01):
        cfg = ClassifierConfig(l2=l2)
        for feat in ("dm", "bm", "bc", "tf"):
            scores = []
            for e in fold_vecs:
                clf = train_classifier(e[f"{feat}_train"], e["y_train"], cfg)
                preds = clf.predict(_as_matrix(e[f"{feat}_test"]))
                scores.append(weighted_fscore(preds, e["y_test"]))
            print(f"  [{aname}] l2={l2:<5} {feat}: mean={np.mean(scores):.4f} {[round(s,3) for s in scores]}")
