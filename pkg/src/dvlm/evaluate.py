"""Genre classification over document vectors: deterministic convex
classifiers, stratified k-fold cross-validation with fold-restricted feature
fitting, weighted F-scores, and paired t-test significance."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy import optimize, stats

from .corpus import Document, LabeledCorpus
from .vectors import DocumentVector

log = logging.getLogger(__name__)

REPORT_FORMAT = "dvlm-report"
REPORT_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# Classifiers


@dataclass(frozen=True)
class ClassifierConfig:
    kind: str = "logreg"      # or "svm"
    l2: float = 1.0
    tol: float = 1e-6
    max_iter: int = 500


class LinearClassifier:
    """Multinomial logistic regression (or squared-hinge one-vs-rest SVM)
    solved to convergence with L-BFGS; zero-initialized, deterministic."""

    def __init__(self, cfg: ClassifierConfig, genres: list[str]):
        self.cfg = cfg
        self.genres = genres
        self.weights: np.ndarray | None = None  # (C, D+1), bias last

    def _logreg_objective(self, w, X, y_idx):
        n, d1 = X.shape
        C = len(self.genres)
        W = w.reshape(C, d1)
        z = X @ W.T
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        nll = -np.log(np.maximum(p[np.arange(n), y_idx], 1e-300)).sum()
        reg = 0.5 * self.cfg.l2 * (W[:, :-1] ** 2).sum()
        grad_z = p
        grad_z[np.arange(n), y_idx] -= 1.0
        grad = grad_z.T @ X
        grad[:, :-1] += self.cfg.l2 * W[:, :-1]
        return nll + reg, grad.ravel()

    def _svm_objective(self, w, X, y_idx):
        n, d1 = X.shape
        C = len(self.genres)
        W = w.reshape(C, d1)
        scores = X @ W.T
        signs = -np.ones((n, C))
        signs[np.arange(n), y_idx] = 1.0
        margin = np.maximum(0.0, 1.0 - signs * scores)
        loss = (margin ** 2).sum()
        reg = 0.5 * self.cfg.l2 * (W[:, :-1] ** 2).sum()
        grad_scores = -2.0 * signs * margin
        grad = grad_scores.T @ X
        grad[:, :-1] += self.cfg.l2 * W[:, :-1]
        return loss + reg, grad.ravel()

    def fit(self, X: np.ndarray, y_idx: np.ndarray) -> "LinearClassifier":
        n, d = X.shape
        Xa = np.hstack([X, np.ones((n, 1))])
        objective = (self._logreg_objective if self.cfg.kind == "logreg"
                     else self._svm_objective)
        w0 = np.zeros(len(self.genres) * (d + 1))
        res = optimize.minimize(
            objective, w0, args=(Xa, y_idx), jac=True, method="L-BFGS-B",
            options={"maxiter": self.cfg.max_iter, "gtol": self.cfg.tol,
                     "ftol": 1e-14})
        self.weights = res.x.reshape(len(self.genres), d + 1)
        return self

    def predict(self, X: np.ndarray) -> list[str]:
        Xa = np.hstack([X, np.ones((X.shape[0], 1))])
        idx = np.argmax(Xa @ self.weights.T, axis=1)
        return [self.genres[i] for i in idx]


def train_classifier(X: Sequence[DocumentVector] | np.ndarray,
                     y: Sequence[str],
                     cfg: ClassifierConfig | None = None) -> LinearClassifier:
    """Fit a classifier on document vectors and genre labels."""
    cfg = cfg or ClassifierConfig()
    if cfg.kind not in ("logreg", "svm"):
        raise ValueError(f"unknown classifier kind {cfg.kind!r}")
    mat = _as_matrix(X)
    genres = sorted(set(y))
    if len(genres) < 2:
        raise ValueError("need at least two genres to classify")
    if mat.shape[0] != len(y):
        raise ValueError("feature/label count mismatch")
    if mat.shape[0] < len(genres):
        raise ValueError("fewer examples than genres")
    index = {g: i for i, g in enumerate(genres)}
    y_idx = np.array([index[g] for g in y], dtype=np.int64)
    return LinearClassifier(cfg, genres).fit(mat, y_idx)


def _as_matrix(X) -> np.ndarray:
    if isinstance(X, np.ndarray):
        return np.asarray(X, dtype=np.float64)
    return np.stack([dv.values for dv in X]).astype(np.float64)


# ---------------------------------------------------------------------------
# Metrics


def weighted_fscore(preds: Sequence[str], golds: Sequence[str]) -> float:
    """Per-genre F1 (0 when precision + recall = 0), weighted by each
    genre's share of the gold labels."""
    if len(preds) != len(golds) or not golds:
        raise ValueError("predictions and golds must be equal-length and nonempty")
    total = len(golds)
    score = 0.0
    for genre in sorted(set(golds)):
        tp = sum(1 for p, g in zip(preds, golds) if p == genre and g == genre)
        fp = sum(1 for p, g in zip(preds, golds) if p == genre and g != genre)
        fn = sum(1 for p, g in zip(preds, golds) if p != genre and g == genre)
        denom = 2 * tp + fp + fn
        f1 = (2 * tp / denom) if denom else 0.0
        score += (tp + fn) / total * f1
    return score


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    critical: float
    significant: bool


def paired_ttest(scores_a: Sequence[float], scores_b: Sequence[float],
                 confidence: float = 0.99) -> TTestResult:
    """Two-sided paired-sample t-test on per-fold score differences."""
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("need two equal-length score lists of length >= 2")
    diffs = a - b
    n = diffs.size
    df = n - 1
    critical = float(stats.t.ppf(1.0 - (1.0 - confidence) / 2.0, df))
    sd = float(diffs.std(ddof=1))
    mean = float(diffs.mean())
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, df, critical, False)
        return TTestResult(math.copysign(math.inf, mean), df, critical, True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, df, critical, abs(t) > critical)


# ---------------------------------------------------------------------------
# Cross-validation


class FeatureProvider(Protocol):
    """Fold-aware feature: fitted on training documents only, then applied
    to any document."""

    recipe: str

    def fit(self, train_docs: Sequence[Document], corpus: LabeledCorpus) -> None: ...

    def vector(self, doc: Document) -> DocumentVector: ...

    def fit_fingerprint(self) -> str: ...


def stratified_folds(corpus: LabeledCorpus, folds: int, seed: int
                     ) -> list[list[str]]:
    """Deal each genre's documents round-robin into `folds` test sets after a
    seeded shuffle. Genres with fewer documents than folds still get spread
    (some folds will lack them)."""
    if folds < 2:
        raise ValueError("folds must be >= 2")
    rng = np.random.default_rng([seed, 503])
    out: list[list[str]] = [[] for _ in range(folds)]
    by_genre: dict[str, list[str]] = {}
    for doc in corpus.documents:
        by_genre.setdefault(doc.genre, []).append(doc.id)
    offset = 0
    for genre in sorted(by_genre):
        ids = by_genre[genre]
        if len(ids) < folds:
            log.warning("genre %r has %d documents for %d folds; spreading",
                        genre, len(ids), folds)
        order = rng.permutation(len(ids))
        for k, i in enumerate(order):
            out[(offset + k) % folds].append(ids[i])
        offset += len(ids)
    return [sorted(fold) for fold in out]


@dataclass
class EvalReport:
    """Per-fold scores and pairwise significance for a set of feature
    recipes evaluated on identical folds."""

    folds: int
    recipes: list[str]
    fold_scores: dict[str, list[float]]
    predictions: dict[str, list[list[tuple[str, str, str]]]]  # (id, gold, pred)
    significance: dict[tuple[str, str], TTestResult]
    fingerprint: str
    confidence: float = 0.99

    def mean_f(self, recipe: str) -> float:
        return float(np.mean(self.fold_scores[recipe]))

    def to_json(self) -> str:
        def enc_t(r: TTestResult):
            t = {math.inf: "inf", -math.inf: "-inf"}.get(r.t, r.t)
            return {"t": t, "df": r.df, "critical": r.critical,
                    "significant": r.significant}

        payload = {
            "format": REPORT_FORMAT,
            "version": REPORT_FORMAT_VERSION,
            "fingerprint": self.fingerprint,
            "confidence": self.confidence,
            "folds": self.folds,
            "recipes": self.recipes,
            "fold_scores": {r: [f"{s:.17g}" for s in v]
                            for r, v in self.fold_scores.items()},
            "mean_f": {r: f"{self.mean_f(r):.17g}" for r in self.recipes},
            "significance": [
                {"a": a, "b": b, **enc_t(res)}
                for (a, b), res in sorted(self.significance.items())
            ],
            "predictions": {
                r: [[list(p) for p in fold] for fold in folds]
                for r, folds in self.predictions.items()
            },
        }
        return json.dumps(payload, sort_keys=True, indent=1)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != REPORT_FORMAT:
            raise ValueError(f"{path}: not an evaluation report")
        sig = {}
        for entry in payload["significance"]:
            t = entry["t"]
            t = {"inf": math.inf, "-inf": -math.inf}.get(t, t)
            sig[(entry["a"], entry["b"])] = TTestResult(
                float(t), entry["df"], entry["critical"], entry["significant"])
        return cls(
            folds=payload["folds"],
            recipes=payload["recipes"],
            fold_scores={r: [float(s) for s in v]
                         for r, v in payload["fold_scores"].items()},
            predictions={r: [[tuple(p) for p in fold] for fold in folds]
                         for r, folds in payload["predictions"].items()},
            significance=sig,
            fingerprint=payload["fingerprint"],
            confidence=payload["confidence"],
        )

    def render_table(self) -> str:
        """Human-readable summary: one row per recipe plus the pairwise
        significance verdicts."""
        width = max((len(r) for r in self.recipes), default=10) + 2
        lines = [f"{'feature':<{width}} {'mean F':>8}  per-fold F"]
        for recipe in self.recipes:
            scores = " ".join(f"{s:.4f}" for s in self.fold_scores[recipe])
            lines.append(f"{recipe:<{width}} {self.mean_f(recipe):>8.4f}  {scores}")
        lines.append("")
        lines.append(f"paired t-test at {self.confidence:.2f} confidence:")
        for (a, b), res in sorted(self.significance.items()):
            verdict = "significant" if res.significant else "not significant"
            lines.append(f"  {a} vs {b}: t={res.t:.4g} (critical "
                         f"{res.critical:.4g}, df={res.df}) -> {verdict}")
        return "\n".join(lines)


def cross_validate(corpus: LabeledCorpus,
                   providers: dict[str, FeatureProvider],
                   folds: int = 10, seed: int = 0,
                   classifier: ClassifierConfig | None = None,
                   fingerprint: str = "") -> EvalReport:
    """Stratified k-fold evaluation of every feature recipe on identical
    folds; fold-dependent features are refit on the training folds only."""
    classifier = classifier or ClassifierConfig()
    fold_ids = stratified_folds(corpus, folds, seed)
    docs_by_id = {d.id: d for d in corpus.documents}
    recipes = list(providers)
    fold_scores: dict[str, list[float]] = {r: [] for r in recipes}
    predictions: dict[str, list[list[tuple[str, str, str]]]] = {r: [] for r in recipes}
    for k, test_ids in enumerate(fold_ids):
        test_set = set(test_ids)
        train_docs = [d for d in corpus.documents if d.id not in test_set]
        test_docs = [docs_by_id[i] for i in test_ids]
        if not test_docs:
            raise ValueError(f"fold {k} is empty; too many folds?")
        for recipe in recipes:
            provider = providers[recipe]
            provider.fit(train_docs, corpus)
            X_train = [provider.vector(d) for d in train_docs]
            y_train = [d.genre for d in train_docs]
            model = train_classifier(X_train, y_train, classifier)
            X_test = [provider.vector(d) for d in test_docs]
            preds = model.predict(_as_matrix(X_test))
            golds = [d.genre for d in test_docs]
            score = weighted_fscore(preds, golds)
            fold_scores[recipe].append(score)
            predictions[recipe].append(
                [(d.id, g, p) for d, g, p in zip(test_docs, golds, preds)])
            log.debug("fold %d %s: weighted F %.4f (confusion: %s)", k, recipe,
                      score, _confusion_counts(preds, golds))
        log.info("fold %d done: %s", k,
                 {r: round(fold_scores[r][-1], 4) for r in recipes})
    significance = {}
    for i, a in enumerate(recipes):
        for b in recipes[i + 1:]:
            significance[(a, b)] = paired_ttest(fold_scores[a], fold_scores[b])
    return EvalReport(folds=folds, recipes=recipes, fold_scores=fold_scores,
                      predictions=predictions, significance=significance,
                      fingerprint=fingerprint)


def _confusion_counts(preds: Sequence[str], golds: Sequence[str]) -> dict:
    counts: dict[str, int] = {}
    for p, g in zip(preds, golds):
        key = f"{g}->{p}"
        counts[key] = counts.get(key, 0) + 1
    return dict(sorted(counts.items()))
