"""Batch experiment runner: a config file drives a pipeline of fingerprinted
stages, each writing inspectable artifacts:

    ingest -> cluster -> train-parent -> adapt-all -> features -> evaluate -> report

Re-running a stage whose artifact already carries the current fingerprint is
a no-op; a mismatched fingerprint refuses to overwrite unless --force.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import multiprocessing
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import baselines, features
from .adaptation import FreezeMask, adapt, default_mask, dv_lstm, dv_rnn
from .corpus import (LabeledCorpus, TokenPolicy, filter_documents, load_corpus,
                     load_corpus_cache, merge_genres, save_corpus, synth_corpus,
                     synth_preset)
from .evaluate import ClassifierConfig, EvalReport, cross_validate, paired_ttest, \
    train_classifier, weighted_fscore, _as_matrix
from .lstm_lm import LstmLm, lstm_train
from .numerics import TrainConfig
from .rnn_lm import RnnLm, rnn_train
from .vectors import DocumentVector, concat_features, load_vectors, save_vectors
from .word_classes import WordClassMap, brown_cluster

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


def _fingerprint(payload) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _safe_name(recipe: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]", "_", recipe)


@dataclass
class ExperimentConfig:
    """Parsed and validated experiment configuration."""

    raw: dict
    base_dir: Path
    output_dir: Path
    seed: int
    corpus_cfg: dict
    family: str
    hidden_size: int
    compress_size: int
    num_classes: int
    parent: TrainConfig
    adaptation: TrainConfig
    freeze_mask: FreezeMask
    feature_names: list[str]
    pvdm_cfg: dict
    class_tf_cfg: dict
    folds: int
    classifier: ClassifierConfig
    workers: int = 1

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise PipelineError(f"config not found: {path}")
        raw = json.loads(path.read_text(encoding="utf-8"))
        base = path.parent
        if "seed" not in raw:
            raise PipelineError("config must pin an explicit seed")
        seed = int(raw["seed"])
        corpus_cfg = raw.get("corpus", {})
        if "manifest" not in corpus_cfg and "synth" not in corpus_cfg:
            raise PipelineError("corpus config needs a 'manifest' or 'synth' entry")
        if "manifest" in corpus_cfg:
            manifest = base / corpus_cfg["manifest"]
            if not manifest.is_file():
                raise PipelineError(f"manifest not found: {manifest}")
        model = raw.get("model", {})
        family = model.get("family", "lstm")
        if family not in ("rnn", "lstm"):
            raise PipelineError(f"unknown model family {family!r}")
        num_classes = int(model.get("num_classes", 100 if family == "rnn" else 500))
        parent = _train_config(raw.get("parent", {}), seed)
        adaptation = _train_config(raw.get("adaptation", {
            "learning_rate": 0.05, "epochs": 5}), seed)
        mask_names = raw.get("freeze_mask")
        mask = FreezeMask(mask_names) if mask_names else default_mask(family)
        eval_cfg = raw.get("evaluation", {})
        classifier = ClassifierConfig(
            kind=eval_cfg.get("classifier", "logreg"),
            l2=float(eval_cfg.get("l2", 1.0)),
            tol=float(eval_cfg.get("tol", 1e-6)),
            max_iter=int(eval_cfg.get("max_iter", 500)))
        cfg = cls(
            raw=raw, base_dir=base,
            output_dir=base / raw.get("output_dir", "out"),
            seed=seed, corpus_cfg=corpus_cfg, family=family,
            hidden_size=int(model.get("hidden_size", 100)),
            compress_size=int(model.get("compress_size", 100)),
            num_classes=num_classes,
            parent=parent, adaptation=adaptation, freeze_mask=mask,
            feature_names=list(raw.get("features", [])),
            pvdm_cfg=raw.get("pvdm", {}),
            class_tf_cfg=raw.get("class_tf", {}),
            folds=int(eval_cfg.get("folds", 10)),
            classifier=classifier,
            workers=int(raw.get("workers", 1)),
        )
        return cfg

    # -- stage fingerprints (cumulative: downstream changes never invalidate
    # upstream artifacts, upstream changes invalidate everything after) ------

    def fp_ingest(self) -> str:
        return _fingerprint({"corpus": self.corpus_cfg, "seed": self.seed,
                             "folds": self.folds})

    def fp_cluster(self) -> str:
        return _fingerprint({"ingest": self.fp_ingest(),
                             "num_classes": self.num_classes})

    def fp_parent(self) -> str:
        return _fingerprint({"cluster": self.fp_cluster(), "family": self.family,
                             "hidden": self.hidden_size,
                             "compress": self.compress_size,
                             "parent": vars(self.parent).copy()})

    def fp_adapt(self) -> str:
        return _fingerprint({"parent": self.fp_parent(),
                             "adaptation": vars(self.adaptation).copy(),
                             "mask": sorted(self.freeze_mask.trainable)})

    def fp_features(self) -> str:
        return _fingerprint({"ingest": self.fp_ingest(),
                             "cluster": self.fp_cluster(),
                             "features": sorted(self.feature_names),
                             "pvdm": self.pvdm_cfg, "class_tf": self.class_tf_cfg})

    def fp_evaluate(self) -> str:
        return _fingerprint({"adapt": self.fp_adapt(),
                             "features": self.fp_features(),
                             "recipes": self.feature_names,
                             "classifier": vars(self.classifier).copy()})

    # -- artifact paths ------------------------------------------------------

    def corpus_path(self) -> Path:
        return self.output_dir / "corpus.json"

    def folds_path(self) -> Path:
        return self.output_dir / "folds.json"

    def classes_path(self, fold: int | None) -> Path:
        tag = "all" if fold is None else f"fold{fold}"
        return self.output_dir / f"classes_{tag}.tsv"

    def cluster_meta_path(self) -> Path:
        return self.output_dir / "cluster.json"

    def parent_path(self, fold: int | None) -> Path:
        tag = "all" if fold is None else f"fold{fold}"
        return self.output_dir / f"parent_{tag}.ckpt"

    def dv_path(self, recipe: str, fold: int | None) -> Path:
        tag = "all" if fold is None else f"fold{fold}"
        return self.output_dir / f"dv_{_safe_name(recipe)}_{tag}.tsv"

    def report_path(self) -> Path:
        return self.output_dir / "report.json"

    def report_text_path(self) -> Path:
        return self.output_dir / "report.txt"


def _train_config(section: dict, seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=float(section.get("learning_rate", 0.1)),
        lr_decay=float(section.get("lr_decay", 0.5)),
        epochs=int(section.get("epochs", 8)),
        bptt_span=int(section.get("bptt_span", 5)),
        clip_threshold=float(section.get("clip_threshold", 5.0)),
        seed=int(section.get("seed", seed)),
        precision=section.get("precision", "fp32"),
    )


# ---------------------------------------------------------------------------
# Recipe handling

MODEL_RECIPES = {"rnn": [f"dv_rnn_{p}" for p in features.RNN_DV_PARTS],
                 "lstm": [f"dv_lstm_{p}" for p in features.LSTM_DV_PARTS]}


def canonical_recipe(cfg: ExperimentConfig, name: str) -> str:
    """Normalize a configured feature name to the recipe tag its vectors
    carry (e.g. bare 'tfidf' -> 'tfidf:n=5:top=10000')."""
    name = name.strip()
    if name.startswith("concat(") and name.endswith(")"):
        inner = name[len("concat("):-1]
        a, b = _split_concat(inner)
        return f"concat({canonical_recipe(cfg, a)},{canonical_recipe(cfg, b)})"
    if name == "tfidf":
        return "tfidf:n=5:top=10000"
    if name.startswith("tfidf:"):
        n, top = _parse_tfidf(name)
        return f"tfidf:n={n}:top={top}"
    if name == "class_tf":
        c = int(cfg.class_tf_cfg.get("num_classes", cfg.num_classes))
        w = cfg.class_tf_cfg.get("weighting", "tf")
        return f"class_tf:c={c}:{w}"
    if name.startswith("class_tf:"):
        return name
    if name == "pvdm":
        return f"pvdm:dim={int(cfg.pvdm_cfg.get('dim', 500))}"
    if name.startswith("pvdm:"):
        return name
    if name in MODEL_RECIPES["rnn"] + MODEL_RECIPES["lstm"] \
            or name.startswith("random:"):
        return name
    raise PipelineError(f"unknown feature recipe {name!r}")


def _split_concat(inner: str) -> tuple[str, str]:
    depth = 0
    for i, ch in enumerate(inner):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            return inner[:i], inner[i + 1:]
    raise PipelineError(f"cannot parse concat feature {inner!r}")


def _parse_tfidf(name: str) -> tuple[int, int]:
    n, top = 5, 10000
    for part in name.split(":")[1:]:
        key, value = part.split("=")
        if key == "n":
            n = int(value)
        elif key == "top":
            top = int(value)
        else:
            raise PipelineError(f"unknown tfidf option {key!r}")
    return n, top


def _flatten_recipes(cfg: ExperimentConfig) -> tuple[list[str], list[str]]:
    """(all exportable base recipes, evaluation recipes): concat components
    are added to the export plan implicitly."""
    eval_recipes = [canonical_recipe(cfg, n) for n in cfg.feature_names]
    base: list[str] = []

    def walk(recipe: str) -> None:
        if recipe.startswith("concat("):
            a, b = _split_concat(recipe[len("concat("):-1])
            walk(a)
            walk(b)
        elif recipe not in base:
            base.append(recipe)

    for recipe in eval_recipes:
        walk(recipe)
    return base, eval_recipes


def _model_recipes(cfg: ExperimentConfig, base: list[str]) -> list[str]:
    return [r for r in base if r in MODEL_RECIPES[cfg.family]]


def _baseline_recipes(cfg: ExperimentConfig, base: list[str]) -> list[str]:
    prefixes = ("tfidf:", "class_tf:", "pvdm:", "random:")
    return [r for r in base if r.startswith(prefixes)]


# ---------------------------------------------------------------------------
# Stage helpers


def _check_artifact(path: Path, fingerprint: str, read_fp, force: bool) -> bool:
    """True when the artifact is current (skip); raises on a stale artifact
    unless --force."""
    if not path.exists():
        return False
    try:
        existing = read_fp(path)
    except Exception:
        existing = None
    if existing == fingerprint:
        return True
    if not force:
        raise PipelineError(
            f"{path} was produced under fingerprint {existing!r}, current is "
            f"{fingerprint!r}; rerun with --force to overwrite")
    return False


def _dv_fp(path: Path) -> str:
    return load_vectors(path)[1]


def _corpus_fp(path: Path) -> str:
    return load_corpus_cache(path)[1]


def _json_fp(path: Path) -> str:
    return json.loads(path.read_text(encoding="utf-8")).get("fingerprint")


def _ckpt_fp(path: Path):
    from .numerics import ParamStore
    _, meta = ParamStore.load(path)
    return meta.get("extra", {}).get("fingerprint")


def _load_corpus_artifact(cfg: ExperimentConfig) -> LabeledCorpus:
    path = cfg.corpus_path()
    if not path.exists():
        raise PipelineError(f"missing corpus cache {path}; run 'ingest' first")
    corpus, fp = load_corpus_cache(path)
    if fp != cfg.fp_ingest():
        raise PipelineError(f"{path} fingerprint {fp!r} does not match config "
                            f"{cfg.fp_ingest()!r}; re-run 'ingest'")
    return corpus


def _load_folds(cfg: ExperimentConfig) -> list[list[str]]:
    path = cfg.folds_path()
    if not path.exists():
        raise PipelineError(f"missing fold assignment {path}; run 'ingest' first")
    payload = json.loads(path.read_text(encoding="utf-8"))
    if payload.get("fingerprint") != cfg.fp_ingest():
        raise PipelineError(f"{path} is stale; re-run 'ingest'")
    return payload["folds"]


def _fold_tags(cfg: ExperimentConfig) -> list[int | None]:
    return [None] + list(range(cfg.folds))


def _train_docs_for(corpus: LabeledCorpus, fold_ids: list[list[str]],
                    fold: int | None):
    if fold is None:
        return list(corpus.documents)
    test = set(fold_ids[fold])
    return [d for d in corpus.documents if d.id not in test]


# ---------------------------------------------------------------------------
# Stages


def cmd_ingest(cfg: ExperimentConfig, force: bool = False) -> int:
    from .evaluate import stratified_folds
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    fp = cfg.fp_ingest()
    if _check_artifact(cfg.corpus_path(), fp, _corpus_fp, force) \
            and _check_artifact(cfg.folds_path(), fp, _json_fp, force):
        log.info("ingest: up to date (fingerprint %s)", fp)
        return 0
    section = cfg.corpus_cfg
    if "synth" in section:
        synth = dict(section["synth"])
        synth.pop("preset", None)
        doc_length = synth.pop("doc_length", None)
        if doc_length:
            synth["doc_length"] = tuple(doc_length)
        corpus = synth_corpus(synth_preset(**synth), seed=cfg.seed)
    else:
        policy = TokenPolicy(**section.get("tokenization", {}))
        corpus = load_corpus(cfg.base_dir / section["manifest"], policy)
    filt = section.get("filter")
    if filt:
        corpus = filter_documents(
            corpus, min_words=int(filt.get("min_words", 0)),
            per_genre_cap=filt.get("per_genre_cap"),
            drop_genres=filt.get("drop_genres", ()))
    merge = section.get("merge_genres")
    if merge:
        corpus = merge_genres(corpus, merge)
    save_corpus(corpus, cfg.corpus_path(), fingerprint=fp)
    folds = stratified_folds(corpus, cfg.folds, cfg.seed)
    cfg.folds_path().write_text(json.dumps(
        {"fingerprint": fp, "folds": folds}, sort_keys=True), encoding="utf-8")
    log.info("ingest: %d documents, %d genres, vocabulary %d",
             len(corpus), len(corpus.genres), len(corpus.vocabulary))
    return 0


def cmd_cluster(cfg: ExperimentConfig, force: bool = False) -> int:
    fp = cfg.fp_cluster()
    meta_path = cfg.cluster_meta_path()
    if _check_artifact(meta_path, fp, _json_fp, force):
        log.info("cluster: up to date")
        return 0
    corpus = _load_corpus_artifact(cfg)
    fold_ids = _load_folds(cfg)
    classes = min(cfg.num_classes, len(corpus.vocabulary))
    for fold in _fold_tags(cfg):
        docs = _train_docs_for(corpus, fold_ids, fold)
        cmap = brown_cluster(corpus, classes, documents=docs)
        cmap.save(cfg.classes_path(fold), corpus.vocabulary.words)
        log.info("cluster: wrote %s", cfg.classes_path(fold))
    meta_path.write_text(json.dumps(
        {"fingerprint": fp, "num_classes": classes}, sort_keys=True),
        encoding="utf-8")
    return 0


def _build_parent(cfg: ExperimentConfig, corpus: LabeledCorpus,
                  cmap: WordClassMap):
    if cfg.family == "rnn":
        return rnn_train(corpus, cfg.parent, cfg.hidden_size, cmap)
    return lstm_train(corpus, cfg.parent, cmap, cfg.compress_size,
                      cfg.hidden_size)


def cmd_train_parent(cfg: ExperimentConfig, force: bool = False) -> int:
    fp = cfg.fp_parent()
    done = all(_check_artifact(cfg.parent_path(f), fp, _ckpt_fp, force)
               for f in _fold_tags(cfg))
    if done:
        log.info("train-parent: up to date")
        return 0
    corpus = _load_corpus_artifact(cfg)
    fold_ids = _load_folds(cfg)
    if not cfg.cluster_meta_path().exists():
        raise PipelineError(f"missing cluster artifacts "
                            f"{cfg.cluster_meta_path()}; run 'cluster' first")
    if _json_fp(cfg.cluster_meta_path()) != cfg.fp_cluster():
        raise PipelineError("cluster artifacts are stale; re-run 'cluster'")
    for fold in _fold_tags(cfg):
        path = cfg.parent_path(fold)
        if _check_artifact(path, fp, _ckpt_fp, force):
            continue
        cmap = WordClassMap.load(cfg.classes_path(fold), corpus.vocabulary.words)
        docs = _train_docs_for(corpus, fold_ids, fold)
        sub = corpus.subset([d.id for d in docs])
        model = _build_parent(cfg, sub, cmap)
        model.save(path, extra={"fingerprint": fp, "fold": fold})
        log.info("train-parent: wrote %s", path)
    return 0


def _load_parent(cfg: ExperimentConfig, fold: int | None):
    path = cfg.parent_path(fold)
    if not path.exists():
        raise PipelineError(f"missing parent checkpoint {path}; "
                            f"run 'train-parent' first")
    loader = RnnLm if cfg.family == "rnn" else LstmLm
    model, extra = loader.from_checkpoint(path)
    if extra.get("fingerprint") != cfg.fp_parent():
        raise PipelineError(f"{path} is stale; re-run 'train-parent'")
    return model


_worker_state: dict = {}


def _adapt_worker_init(parent_path: str, family: str, mask_names, cfg_dict):
    loader = RnnLm if family == "rnn" else LstmLm
    _worker_state["parent"], _ = loader.from_checkpoint(parent_path)
    _worker_state["mask"] = FreezeMask(mask_names)
    _worker_state["cfg"] = TrainConfig(**cfg_dict)
    _worker_state["family"] = family


def _adapt_worker(doc) -> tuple[str, dict[str, np.ndarray]]:
    parent = _worker_state["parent"]
    adapted = adapt(parent, doc, _worker_state["mask"], _worker_state["cfg"])
    if _worker_state["family"] == "rnn":
        parts = {p: dv_rnn(adapted, p).values for p in features.RNN_DV_PARTS}
    else:
        parts = {p: dv_lstm(adapted, p).values for p in features.LSTM_DV_PARTS}
    return doc.id, parts


def _adapt_fold(cfg: ExperimentConfig, corpus: LabeledCorpus,
                fold: int | None, workers: int) -> dict[str, dict[str, np.ndarray]]:
    """Adapt every corpus document against the fold parent; returns
    doc id -> part -> values, deterministically ordered."""
    parent_path = str(cfg.parent_path(fold))
    docs = list(corpus.documents)
    if workers > 1:
        with multiprocessing.Pool(
                workers, initializer=_adapt_worker_init,
                initargs=(parent_path, cfg.family,
                          cfg.freeze_mask.trainable,
                          vars(cfg.adaptation).copy())) as pool:
            results = pool.map(_adapt_worker, docs, chunksize=4)
    else:
        _adapt_worker_init(parent_path, cfg.family, cfg.freeze_mask.trainable,
                           vars(cfg.adaptation).copy())
        results = [_adapt_worker(doc) for doc in docs]
    return {doc_id: parts for doc_id, parts in sorted(results)}


def cmd_adapt_all(cfg: ExperimentConfig, force: bool = False,
                  workers: int | None = None) -> int:
    base, _ = _flatten_recipes(cfg)
    recipes = _model_recipes(cfg, base)
    if not recipes:
        log.info("adapt-all: no adapted-parameter recipes requested")
        return 0
    fp = cfg.fp_adapt()
    needed = [(recipe, fold) for recipe in recipes for fold in _fold_tags(cfg)
              if not _check_artifact(cfg.dv_path(recipe, fold), fp, _dv_fp, force)]
    if not needed:
        log.info("adapt-all: up to date")
        return 0
    corpus = _load_corpus_artifact(cfg)
    workers = workers or cfg.workers
    folds_needed = sorted({fold for _, fold in needed},
                          key=lambda f: -1 if f is None else f)
    for fold in folds_needed:
        per_doc = _adapt_fold(cfg, corpus, fold, workers)
        for recipe in recipes:
            part = recipe.split("_")[-1]
            vectors = {doc_id: DocumentVector(parts[part], recipe)
                       for doc_id, parts in per_doc.items()}
            save_vectors(vectors, cfg.dv_path(recipe, fold), fingerprint=fp)
        log.info("adapt-all: fold %s done (%d docs)", fold, len(per_doc))
    return 0


def cmd_features(cfg: ExperimentConfig, force: bool = False) -> int:
    base, _ = _flatten_recipes(cfg)
    recipes = _baseline_recipes(cfg, base)
    if not recipes:
        log.info("features: no baseline recipes requested")
        return 0
    fp = cfg.fp_features()
    needed = [(r, f) for r in recipes for f in _fold_tags(cfg)
              if not _check_artifact(cfg.dv_path(r, f), fp, _dv_fp, force)]
    if not needed:
        log.info("features: up to date")
        return 0
    corpus = _load_corpus_artifact(cfg)
    fold_ids = _load_folds(cfg)
    providers = {r: _make_baseline_provider(cfg, r) for r in recipes}
    for fold in _fold_tags(cfg):
        train_docs = _train_docs_for(corpus, fold_ids, fold)
        for recipe in recipes:
            path = cfg.dv_path(recipe, fold)
            if _check_artifact(path, fp, _dv_fp, force):
                continue
            provider = providers[recipe]
            provider.fit(train_docs, corpus)
            vectors = {d.id: provider.vector(d) for d in corpus.documents}
            save_vectors(vectors, path, fingerprint=fp)
            log.info("features: wrote %s", path)
    return 0


def _make_baseline_provider(cfg: ExperimentConfig, recipe: str):
    if recipe.startswith("tfidf:"):
        n, top = _parse_tfidf(recipe)
        return features.TfidfFeature(n, top)
    if recipe.startswith("class_tf:"):
        parts = dict(p.split("=") for p in recipe.split(":")[1:2])
        c = int(parts["c"])
        weighting = recipe.split(":")[-1]
        return features.ClassTfFeature(c, weighting)
    if recipe.startswith("pvdm:"):
        dim = int(recipe.split("=")[-1])
        section = dict(cfg.pvdm_cfg)
        section["dim"] = dim
        section.setdefault("seed", cfg.seed)
        return features.PvdmFeature(baselines.PvdmConfig(**section))
    if recipe.startswith("random:"):
        dim = int(recipe.split("=")[-1])
        return features.RandomFeature(dim, cfg.seed)
    raise PipelineError(f"unknown baseline recipe {recipe!r}")


def _load_recipe_vectors(cfg: ExperimentConfig, recipe: str, fold: int | None
                         ) -> dict[str, DocumentVector]:
    """Vectors for one recipe on one fold, assembling concatenations from
    their component exports."""
    if recipe.startswith("concat("):
        a, b = _split_concat(recipe[len("concat("):-1])
        va = _load_recipe_vectors(cfg, a, fold)
        vb = _load_recipe_vectors(cfg, b, fold)
        return {doc_id: concat_features(va[doc_id], vb[doc_id]) for doc_id in va}
    path = cfg.dv_path(recipe, fold)
    if not path.exists():
        raise PipelineError(f"missing document-vector export {path}; run "
                            f"'adapt-all' and 'features' first")
    vectors, fp = load_vectors(path)
    expected = cfg.fp_adapt() if recipe in MODEL_RECIPES[cfg.family] \
        else cfg.fp_features()
    if fp != expected:
        raise PipelineError(f"{path} is stale (fingerprint {fp!r}); re-run "
                            f"its producing stage")
    return vectors


def cmd_evaluate(cfg: ExperimentConfig, force: bool = False) -> int:
    if not cfg.feature_names:
        raise PipelineError("no features configured to evaluate")
    fp = cfg.fp_evaluate()
    if _check_artifact(cfg.report_path(), fp, _json_fp, force):
        log.info("evaluate: up to date")
        return 0
    corpus = _load_corpus_artifact(cfg)
    fold_ids = _load_folds(cfg)
    _, eval_recipes = _flatten_recipes(cfg)
    genre_of = {d.id: d.genre for d in corpus.documents}
    fold_scores: dict[str, list[float]] = {r: [] for r in eval_recipes}
    predictions: dict[str, list] = {r: [] for r in eval_recipes}
    for fold in range(cfg.folds):
        test_ids = fold_ids[fold]
        test_set = set(test_ids)
        train_ids = [d.id for d in corpus.documents if d.id not in test_set]
        for recipe in eval_recipes:
            vectors = _load_recipe_vectors(cfg, recipe, fold)
            X_train = [vectors[i] for i in train_ids]
            y_train = [genre_of[i] for i in train_ids]
            clf = train_classifier(X_train, y_train, cfg.classifier)
            X_test = _as_matrix([vectors[i] for i in test_ids])
            preds = clf.predict(X_test)
            golds = [genre_of[i] for i in test_ids]
            fold_scores[recipe].append(weighted_fscore(preds, golds))
            predictions[recipe].append(list(zip(test_ids, golds, preds)))
        log.info("evaluate: fold %d done", fold)
    significance = {}
    for i, a in enumerate(eval_recipes):
        for b in eval_recipes[i + 1:]:
            significance[(a, b)] = paired_ttest(fold_scores[a], fold_scores[b])
    report = EvalReport(folds=cfg.folds, recipes=eval_recipes,
                        fold_scores=fold_scores, predictions=predictions,
                        significance=significance, fingerprint=fp)
    report.save(cfg.report_path())
    log.info("evaluate: wrote %s", cfg.report_path())
    return 0


def cmd_report(cfg: ExperimentConfig, force: bool = False) -> int:
    path = cfg.report_path()
    if not path.exists():
        raise PipelineError(f"missing evaluation report {path}; run 'evaluate' first")
    report = EvalReport.load(path)
    if report.fingerprint != cfg.fp_evaluate():
        raise PipelineError(f"{path} is stale; re-run 'evaluate'")
    table = report.render_table()
    cfg.report_text_path().write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


STAGES = [
    ("ingest", cmd_ingest),
    ("cluster", cmd_cluster),
    ("train-parent", cmd_train_parent),
    ("adapt-all", cmd_adapt_all),
    ("features", cmd_features),
    ("evaluate", cmd_evaluate),
    ("report", cmd_report),
]


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="dvlm", description="document-vector experiment pipeline")
    parser.add_argument("command", choices=[name for name, _ in STAGES] + ["run-all"])
    parser.add_argument("--config", required=True, help="experiment config (JSON)")
    parser.add_argument("--force", action="store_true",
                        help="overwrite artifacts with stale fingerprints")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker count for adapt-all")
    parser.add_argument("--log-level", default="INFO")
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.command == "run-all":
            for name, fn in STAGES:
                kwargs = {"workers": args.workers} if name == "adapt-all" else {}
                status = fn(cfg, force=args.force, **kwargs)
                if status != 0:
                    return status
            return 0
        fn = dict(STAGES)[args.command]
        kwargs = {"workers": args.workers} if args.command == "adapt-all" else {}
        return fn(cfg, force=args.force, **kwargs)
    except PipelineError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
