"""Shared numerical plumbing: named parameter store, SGD with gradient
clipping, finite-difference gradient verification, and a deterministic
checkpoint container used by both language models.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol

import numpy as np

CHECKPOINT_MAGIC = b"DVLMCKPT"
CHECKPOINT_VERSION = 1

_DTYPES = {"fp32": np.float32, "fp64": np.float64, "fp80": np.longdouble}
TRAIN_PRECISIONS = ("fp32", "fp64")  # fp80 is an internal evaluation precision


class NumericsError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by parent training and per-document adaptation."""

    learning_rate: float = 0.1
    lr_decay: float = 0.5
    epochs: int = 8
    bptt_span: int = 5
    clip_threshold: float = 5.0
    seed: int = 0
    precision: str = "fp32"

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.bptt_span < 1:
            raise ValueError("bptt_span must be >= 1")
        if self.clip_threshold <= 0:
            raise ValueError("clip_threshold must be > 0")
        if self.precision not in TRAIN_PRECISIONS:
            raise ValueError(f"precision must be one of {TRAIN_PRECISIONS}")

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(_DTYPES[self.precision])


class ParamStore:
    """Named real tensors with per-tensor trainable flags.

    Shapes are fixed at creation; values are mutated in place by training.
    """

    def __init__(self, precision: str = "fp32"):
        if precision not in _DTYPES:
            raise ValueError(f"precision must be one of {sorted(_DTYPES)}")
        self.precision = precision
        self.dtype = np.dtype(_DTYPES[precision])
        self._tensors: dict[str, np.ndarray] = {}
        self._trainable: dict[str, bool] = {}

    def add(self, name: str, shape: tuple[int, ...],
            init: np.ndarray | Callable[[tuple[int, ...]], np.ndarray] | None = None,
            trainable: bool = True) -> np.ndarray:
        if name in self._tensors:
            raise ValueError(f"duplicate tensor name {name!r}")
        if init is None:
            value = np.zeros(shape, dtype=self.dtype)
        elif callable(init):
            value = np.asarray(init(shape), dtype=self.dtype).reshape(shape)
        else:
            value = np.asarray(init, dtype=self.dtype).reshape(shape)
        self._tensors[name] = value
        self._trainable[name] = trainable
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def names(self) -> list[str]:
        return list(self._tensors)

    def is_trainable(self, name: str) -> bool:
        return self._trainable[name]

    def set_trainable(self, name: str, flag: bool) -> None:
        if name not in self._tensors:
            raise KeyError(name)
        self._trainable[name] = flag

    def trainable_names(self) -> list[str]:
        return [n for n, f in self._trainable.items() if f]

    def num_coords(self, names: Iterable[str] | None = None) -> int:
        names = self.names() if names is None else list(names)
        return sum(self._tensors[n].size for n in names)

    def clone(self) -> "ParamStore":
        other = ParamStore(self.precision)
        for name, value in self._tensors.items():
            other.add(name, value.shape, init=value.copy(),
                      trainable=self._trainable[name])
        return other

    def cast(self, precision: str) -> "ParamStore":
        other = ParamStore(precision)
        for name, value in self._tensors.items():
            other.add(name, value.shape, init=value.astype(other.dtype),
                      trainable=self._trainable[name])
        return other

    def zeros_like(self) -> "ParamStore":
        other = ParamStore(self.precision)
        for name, value in self._tensors.items():
            other.add(name, value.shape, trainable=self._trainable[name])
        return other

    def check_finite(self) -> None:
        for name, value in self._tensors.items():
            if not np.all(np.isfinite(value)):
                raise NumericsError(f"non-finite values in tensor {name!r}")

    def allclose(self, other: "ParamStore", rtol: float = 0.0, atol: float = 0.0) -> bool:
        if self.names() != other.names():
            return False
        return all(np.allclose(self[n], other[n], rtol=rtol, atol=atol)
                   for n in self.names())

    def save(self, path, metadata: dict | None = None) -> None:
        """Write a byte-stable checkpoint: identical stores and metadata
        produce identical files."""
        if self.precision == "fp80":
            raise NumericsError("fp80 stores are evaluation-only, not persistable")
        header = {
            "precision": self.precision,
            "tensors": [
                {"name": n, "shape": list(v.shape), "trainable": self._trainable[n]}
                for n, v in self._tensors.items()
            ],
            "metadata": metadata or {},
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
            fh.write(blob)
            for value in self._tensors.values():
                fh.write(np.ascontiguousarray(value, dtype="<" + value.dtype.str[1:]).tobytes())

    @classmethod
    def load(cls, path) -> tuple["ParamStore", dict]:
        with open(path, "rb") as fh:
            magic = fh.read(len(CHECKPOINT_MAGIC))
            if magic != CHECKPOINT_MAGIC:
                raise NumericsError(f"{path}: not a checkpoint file")
            version, hlen = struct.unpack("<II", fh.read(8))
            if version != CHECKPOINT_VERSION:
                raise NumericsError(f"{path}: unsupported checkpoint version {version}")
            header = json.loads(fh.read(hlen).decode("utf-8"))
            store = cls(header["precision"])
            for entry in header["tensors"]:
                shape = tuple(entry["shape"])
                count = int(np.prod(shape)) if shape else 1
                raw = fh.read(count * store.dtype.itemsize)
                value = np.frombuffer(raw, dtype="<" + store.dtype.str[1:]).astype(store.dtype)
                store.add(entry["name"], shape, init=value.reshape(shape),
                          trainable=entry["trainable"])
        return store, header["metadata"]


def uniform_init(rng: np.random.Generator, scale: float = 0.1):
    """Standard [-scale, scale] uniform initializer."""

    def init(shape: tuple[int, ...]) -> np.ndarray:
        return rng.uniform(-scale, scale, size=shape)

    return init


def sgd_update(store: ParamStore, grads: ParamStore, lr: float, clip: float) -> None:
    """One SGD step: each trainable tensor t <- t - lr * g, after clipping g
    to L2 norm `clip` per tensor. Non-trainable tensors are never touched."""
    for name in store.trainable_names():
        g = grads[name]
        if g.shape != store[name].shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient in tensor {name!r}")
        norm = float(np.linalg.norm(g))
        if np.isfinite(clip) and norm > clip:
            g = g * (clip / norm)
        store[name][...] -= lr * g


class GradientModel(Protocol):
    """Anything exposing a scalar loss and its analytic gradients over a
    ParamStore; both language models satisfy this."""

    params: ParamStore

    def loss(self, tokens) -> float: ...

    def gradients(self, tokens) -> ParamStore: ...


def finite_diff_check(model: GradientModel, tokens, eps: float = 1e-5,
                      samples: int = 200, seed: int = 0,
                      groups: list[str] | None = None) -> float:
    """Compare analytic gradients against central differences
    (L(t+eps) - L(t-eps)) / (2 eps) at `samples` randomly chosen parameter
    coordinates; returns the maximum relative error
    |a - n| / max(|a|, |n|, 1e-12).

    Run on an fp64 model for meaningful tolerances. When the model supports
    precision casting, the loss differences are evaluated at extended
    precision so that roundoff does not mask small-gradient coordinates.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    params = model.params
    names = params.names() if groups is None else list(groups)
    sizes = [params[n].size for n in names]
    total = sum(sizes)
    if total == 0:
        raise ValueError("no parameters to check")
    analytic = model.gradients(tokens)

    probe = model
    if hasattr(model, "cast") and params.precision == "fp64":
        probe = model.cast("fp80")
    probe_params = probe.params
    eps_hi = probe_params.dtype.type(eps)

    rng = np.random.default_rng(seed)
    if samples >= total:
        coords = np.arange(total)
    else:
        coords = rng.choice(total, size=samples, replace=False)
    offsets = np.cumsum([0] + sizes)

    max_rel = 0.0
    for flat in coords:
        which = int(np.searchsorted(offsets, flat, side="right")) - 1
        name = names[which]
        idx = int(flat - offsets[which])
        tensor = probe_params[name]
        old = tensor.flat[idx]
        tensor.flat[idx] = old + eps_hi
        loss_plus = probe.loss(tokens)
        tensor.flat[idx] = old - eps_hi
        loss_minus = probe.loss(tokens)
        tensor.flat[idx] = old
        numeric = float((loss_plus - loss_minus) / (2.0 * eps_hi))
        a = float(analytic[name].flat[idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
        max_rel = max(max_rel, rel)
    return max_rel
