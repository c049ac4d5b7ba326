"""LSTM language model: one-hot input -> linear compression layer -> sigmoid
layer -> LSTM cell -> class-factorized output with class biases.

Gates use the logistic sigmoid, the cell candidate uses tanh, there are no
peephole connections, and the compression layer carries no bias. Gradients
are hand-derived truncated BPTT, verified against finite differences. The
four gate computations run on stacked weight copies rebuilt per BPTT window;
the named per-gate tensors stay the source of truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .corpus import LabeledCorpus
from .factorized import FactorizedOutput
from .numerics import ParamStore, TrainConfig, uniform_init
from .training import DenseSink, SparseSink, fit_language_model
from .word_classes import WordClassMap

GATE_ORDER = ("forget", "input", "output", "cell")
GATE_BIAS_NAMES = tuple(f"{g}_b" for g in GATE_ORDER)


@dataclass
class LstmForwardResult:
    class_probs: np.ndarray
    word_probs: list[np.ndarray]
    cell_states: np.ndarray        # (T-1, hidden), for gate/cell diagnostics
    log_loss: float


class _Stacks:
    """Per-window stacked copies of the gate weights (4h x h) so one matmul
    serves all four gates."""

    def __init__(self, params: ParamStore):
        self.W = np.concatenate([params[f"{g}_w"] for g in GATE_ORDER])
        self.R = np.concatenate([params[f"{g}_r"] for g in GATE_ORDER])
        self.b = np.concatenate([params[f"{g}_b"] for g in GATE_ORDER])


class LstmLm:
    """Parameter set and computations of the LSTM LM.

    Tensors: compression (p, V); sigmoid_w (h, p) and sigmoid_b (h,);
    per-gate input weights *_w (h, h), recurrent weights *_r (h, h) and
    biases *_b (h,) for the forget/input/output gates and the cell
    candidate; word_out (V, h); class_out (C, h) with class_b (C,).
    """

    family = "lstm"

    def __init__(self, vocab_size: int, compress_size: int, hidden_size: int,
                 class_map: WordClassMap, seed: int = 0, precision: str = "fp32",
                 params: ParamStore | None = None):
        if class_map.vocab_size() != vocab_size:
            raise ValueError("class map does not cover the vocabulary")
        self.vocab_size = vocab_size
        self.compress_size = compress_size
        self.hidden_size = hidden_size
        self.output = FactorizedOutput(class_map)
        if params is not None:
            self.params = params
            return
        rng = np.random.default_rng(seed)
        init = uniform_init(rng)
        p = ParamStore(precision)
        h = hidden_size
        p.add("compression", (compress_size, vocab_size), init)
        p.add("sigmoid_w", (h, compress_size), init)
        p.add("sigmoid_b", (h,))
        for gate in GATE_ORDER:
            p.add(f"{gate}_w", (h, h), init)
            p.add(f"{gate}_r", (h, h), init)
        # standard practice: forget gate starts open, other biases at zero
        p.add("forget_b", (h,), init=np.ones(h))
        p.add("input_b", (h,))
        p.add("output_b", (h,))
        p.add("cell_b", (h,))
        p.add("word_out", (vocab_size, h), init)
        p.add("class_out", (class_map.num_classes, h), init)
        p.add("class_b", (class_map.num_classes,))
        self.params = p

    @property
    def class_map(self) -> WordClassMap:
        return self.output.cmap

    @property
    def num_classes(self) -> int:
        return self.output.num_classes

    def _check(self, tokens) -> np.ndarray:
        toks = np.asarray(tokens, dtype=np.int64)
        if toks.size == 0:
            raise ValueError("empty token sequence")
        if toks.min() < 0 or toks.max() >= self.vocab_size:
            raise ValueError(f"token id out of range for vocabulary size "
                             f"{self.vocab_size}")
        return toks

    def _cell_step(self, stacks: _Stacks, x: int, h_prev: np.ndarray,
                   c_prev: np.ndarray) -> dict:
        p = self.params
        hsz = self.hidden_size
        e = p["compression"][:, x]
        l = expit(p["sigmoid_w"] @ e + p["sigmoid_b"])
        pre = stacks.W @ l + stacks.R @ h_prev + stacks.b
        gates = expit(pre[:3 * hsz])
        f, i, o = gates[:hsz], gates[hsz:2 * hsz], gates[2 * hsz:]
        g = np.tanh(pre[3 * hsz:])
        c = f * c_prev + i * g
        th = np.tanh(c)
        return {"e": e, "l": l, "f": f, "i": i, "o": o, "g": g,
                "c": c, "th": th, "h": o * th}

    # -- forward ------------------------------------------------------------

    def _forward(self, toks: np.ndarray, collect: bool) -> LstmForwardResult:
        p = self.params
        Q, K, bc = p["word_out"], p["class_out"], p["class_b"]
        out = self.output
        stacks = _Stacks(p)
        dtype = p.dtype
        T = toks.size
        h = np.zeros(self.hidden_size, dtype=dtype)
        c = np.zeros(self.hidden_size, dtype=dtype)
        total = 0.0
        class_probs = np.empty((T - 1, self.num_classes)) if collect else None
        word_probs: list[np.ndarray] = []
        cells = np.empty((T - 1, self.hidden_size)) if collect else None
        for t in range(1, T):
            act = self._cell_step(stacks, int(toks[t - 1]), h, c)
            h, c = act["h"], act["c"]
            target = int(toks[t])
            m = out.members[out.class_of[target]]
            loss, pc, pw = out.step_probs(K @ h + bc, Q[m] @ h, target)
            total += loss
            if collect:
                class_probs[t - 1] = pc
                word_probs.append(pw)
                cells[t - 1] = c
        return LstmForwardResult(class_probs, word_probs, cells, total)

    def forward(self, tokens) -> LstmForwardResult:
        toks = self._check(tokens)
        if toks.size < 2:
            raise ValueError("need at least 2 tokens to predict")
        return self._forward(toks, collect=True)

    def loss(self, tokens) -> float:
        toks = self._check(tokens)
        if toks.size < 2:
            raise ValueError("need at least 2 tokens to predict")
        return self._forward(toks, collect=False).log_loss

    def perplexity(self, tokens) -> float:
        toks = self._check(tokens)
        if toks.size < 2:
            raise ValueError("perplexity needs at least 2 tokens")
        return math.exp(self.loss(toks) / (toks.size - 1))

    def full_distributions(self, tokens) -> list[np.ndarray]:
        toks = self._check(tokens)
        p = self.params
        Q, K, bc = p["word_out"], p["class_out"], p["class_b"]
        stacks = _Stacks(p)
        h = np.zeros(self.hidden_size, dtype=p.dtype)
        c = np.zeros(self.hidden_size, dtype=p.dtype)
        dists = []
        for t in range(1, toks.size):
            act = self._cell_step(stacks, int(toks[t - 1]), h, c)
            h, c = act["h"], act["c"]
            dists.append(self.output.full_distribution(
                K @ h + bc, lambda cls: Q[self.output.members[cls]] @ h))
        return dists

    # -- gradients ----------------------------------------------------------

    def _backward_window(self, toks, a, b, carry, sink):
        """Forward the prediction positions [a, b) from the carried (h, c)
        state, backpropagate through the window, hand gradient pieces to the
        sink; returns (loss, new carry)."""
        p = self.params
        Q, K, bc = p["word_out"], p["class_out"], p["class_b"]
        out = self.output
        stacks = _Stacks(p)
        dtype = p.dtype
        hsz = self.hidden_size
        W = b - a
        h_prev, c_prev = carry

        acts = []
        h_prevs = np.empty((W, hsz), dtype=dtype)
        c_prevs = np.empty((W, hsz), dtype=dtype)
        dz_steps = np.empty((W, self.num_classes), dtype=dtype)
        du_steps: list[tuple[np.ndarray, np.ndarray]] = []
        total = 0.0
        h, c = h_prev, c_prev
        for j in range(W):
            h_prevs[j], c_prevs[j] = h, c
            act = self._cell_step(stacks, int(toks[a + j - 1]), h, c)
            acts.append(act)
            h, c = act["h"], act["c"]
            target = int(toks[a + j])
            m = out.members[out.class_of[target]]
            loss, pc, pw = out.step_probs(K @ h + bc, Q[m] @ h, target)
            total += loss
            dz, du = out.logit_grads(pc, pw, target)
            dz_steps[j] = dz
            du_steps.append((m, du.astype(dtype)))

        da_steps = np.empty((W, 4 * hsz), dtype=dtype)  # gate pre-activation grads
        dsl = np.empty((W, hsz), dtype=dtype)
        dh_next = np.zeros(hsz, dtype=dtype)
        dc_next = np.zeros(hsz, dtype=dtype)
        sig_w_t = p["sigmoid_w"].T
        for j in reversed(range(W)):
            act = acts[j]
            m, du = du_steps[j]
            dh = K.T @ dz_steps[j] + Q[m].T @ du + dh_next
            do = dh * act["th"]
            dc = dc_next + dh * act["o"] * (1.0 - act["th"] ** 2)
            dc_next = dc * act["f"]
            da = da_steps[j]
            da[:hsz] = dc * c_prevs[j] * act["f"] * (1.0 - act["f"])
            da[hsz:2 * hsz] = dc * act["g"] * act["i"] * (1.0 - act["i"])
            da[2 * hsz:3 * hsz] = do * act["o"] * (1.0 - act["o"])
            da[3 * hsz:] = dc * act["i"] * (1.0 - act["g"] ** 2)
            dl = stacks.W.T @ da
            dh_next = stacks.R.T @ da
            dsl[j] = dl * act["l"] * (1.0 - act["l"])
            sink.input_col(toks[a + j - 1], sig_w_t @ dsl[j])

        L = np.stack([act["l"] for act in acts])
        E = np.stack([act["e"] for act in acts])
        H = np.stack([act["h"] for act in acts])
        dW_stack = da_steps.T @ L
        dR_stack = da_steps.T @ h_prevs
        db_stack = da_steps.sum(axis=0)
        for gi, gate in enumerate(GATE_ORDER):
            rows = slice(gi * hsz, (gi + 1) * hsz)
            sink.dense(f"{gate}_w", dW_stack[rows])
            sink.dense(f"{gate}_r", dR_stack[rows])
            sink.dense(f"{gate}_b", db_stack[rows])
        sink.dense("sigmoid_w", dsl.T @ E)
        sink.dense("sigmoid_b", dsl.sum(axis=0))
        sink.dense("class_out", dz_steps.T @ H)
        sink.dense("class_b", dz_steps.sum(axis=0))
        for j in range(W):
            m, du = du_steps[j]
            sink.word_rows(m, np.outer(du, H[j]))
        return total, (h, c)

    def gradients(self, tokens, bptt_span: int | None = None) -> ParamStore:
        """Dense gradients of the sequence loss (full BPTT unless a span is
        given); used for verification, not the training loop."""
        toks = self._check(tokens)
        if toks.size < 2:
            raise ValueError("need at least 2 tokens to predict")
        grads = self.params.zeros_like()
        sink = DenseSink(grads, in_name="compression", word_name="word_out")
        span = bptt_span or toks.size
        carry = (np.zeros(self.hidden_size, dtype=self.params.dtype),
                 np.zeros(self.hidden_size, dtype=self.params.dtype))
        for a in range(1, toks.size, span):
            _, carry = self._backward_window(toks, a, min(a + span, toks.size),
                                             carry, sink)
        return grads

    def train_sequence(self, tokens, lr: float, bptt_span: int, clip: float,
                       wrt: set[str] | None = None) -> float:
        """One truncated-BPTT SGD pass (one parameter update per window);
        only trainable tensors move. Returns the sequence loss under the
        parameters each window was forwarded with."""
        toks = self._check(tokens)
        if toks.size < 2:
            return 0.0
        allowed = set(self.params.trainable_names())
        if wrt is not None:
            allowed &= wrt
        carry = (np.zeros(self.hidden_size, dtype=self.params.dtype),
                 np.zeros(self.hidden_size, dtype=self.params.dtype))
        total = 0.0
        for a in range(1, toks.size, bptt_span):
            sink = SparseSink(allowed, in_name="compression", word_name="word_out")
            loss, carry = self._backward_window(
                toks, a, min(a + bptt_span, toks.size), carry, sink)
            total += loss
            sink.apply(self.params, lr, clip)
        return total

    # -- persistence --------------------------------------------------------

    def snapshot(self) -> dict:
        return {n: self.params[n].copy() for n in self.params.names()}

    def restore(self, snap: dict) -> None:
        for n, v in snap.items():
            self.params[n][...] = v

    def clone(self) -> "LstmLm":
        return LstmLm(self.vocab_size, self.compress_size, self.hidden_size,
                      self.class_map, precision=self.params.precision,
                      params=self.params.clone())

    def cast(self, precision: str) -> "LstmLm":
        return LstmLm(self.vocab_size, self.compress_size, self.hidden_size,
                      self.class_map, precision=precision,
                      params=self.params.cast(precision))

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = {
            "model": self.family,
            "vocab_size": self.vocab_size,
            "compress_size": self.compress_size,
            "hidden_size": self.hidden_size,
            "num_classes": self.num_classes,
            "class_of": [int(c) for c in self.class_map.class_of],
            "extra": extra or {},
        }
        self.params.save(path, meta)

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> tuple["LstmLm", dict]:
        store, meta = ParamStore.load(path)
        if meta.get("model") != cls.family:
            raise ValueError(f"{path}: checkpoint is not a {cls.family} model")
        cmap = WordClassMap(np.asarray(meta["class_of"], dtype=np.int64),
                            meta["num_classes"])
        model = cls(meta["vocab_size"], meta["compress_size"],
                    meta["hidden_size"], cmap, params=store)
        return model, meta.get("extra", {})


# -- module-level operations ------------------------------------------------


def lstm_forward(model: LstmLm, tokens) -> LstmForwardResult:
    return model.forward(tokens)


def lstm_train(corpus: LabeledCorpus, cfg: TrainConfig, class_map: WordClassMap,
               compress_size: int = 100, hidden_size: int = 100) -> LstmLm:
    """Train a parent model on all corpus documents."""
    if class_map.vocab_size() != len(corpus.vocabulary):
        raise ValueError("class map does not cover the corpus vocabulary")
    model = LstmLm(len(corpus.vocabulary), compress_size, hidden_size,
                   class_map, seed=cfg.seed, precision=cfg.precision)
    fit_language_model(model, [d.tokens for d in corpus.documents], cfg,
                       name="lstm-lm")
    return model
