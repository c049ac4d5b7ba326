import math

import numpy as np
import pytest

from dvlm.numerics import (NumericsError, ParamStore, TrainConfig,
                           finite_diff_check, sgd_update, uniform_init)


def make_store(**tensors):
    store = ParamStore("fp64")
    for name, value in tensors.items():
        arr = np.asarray(value, dtype=np.float64)
        store.add(name, arr.shape, init=arr)
    return store


def test_sgd_zero_lr_is_identity():
    store = make_store(w=[[1.0, 2.0], [3.0, 4.0]])
    grads = make_store(w=[[0.5, 0.5], [0.5, 0.5]])
    before = store["w"].copy()
    sgd_update(store, grads, lr=0.0, clip=math.inf)
    assert np.array_equal(store["w"], before)


def test_sgd_scalar_arithmetic():
    store = make_store(w=[1.0])
    grads = make_store(w=[0.5])
    sgd_update(store, grads, lr=0.1, clip=math.inf)
    assert store["w"][0] == pytest.approx(0.95, abs=1e-15)


def test_sgd_clips_to_unit_direction():
    store = make_store(w=[0.0, 0.0])
    grads = make_store(w=[3.0, 4.0])
    sgd_update(store, grads, lr=0.1, clip=1.0)
    # norm 5 clipped to 1 -> direction (0.6, 0.8) scaled by lr
    assert np.allclose(store["w"], [-0.06, -0.08], atol=1e-15)


def test_sgd_skips_non_trainable_bitwise():
    store = make_store(w=[1.0, 2.0], frozen=[5.0, 6.0])
    store.set_trainable("frozen", False)
    raw = store["frozen"].tobytes()
    grads = make_store(w=[1.0, 1.0], frozen=[9.0, 9.0])
    sgd_update(store, grads, lr=0.5, clip=math.inf)
    assert store["frozen"].tobytes() == raw
    assert not np.array_equal(store["w"], [1.0, 2.0])


def test_sgd_nonfinite_gradient_fatal():
    store = make_store(w=[1.0])
    grads = make_store(w=[np.nan])
    with pytest.raises(NumericsError, match="'w'"):
        sgd_update(store, grads, lr=0.1, clip=1.0)


class LinearModel:
    """Scalar loss sum(coeffs * w): the exactly-differentiable case."""

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=np.float64)
        self.params = ParamStore("fp64")
        self.params.add("w", self.coeffs.shape,
                        init=np.linspace(-1, 1, self.coeffs.size))

    def loss(self, tokens):
        return float(self.coeffs @ self.params["w"])

    def gradients(self, tokens):
        grads = self.params.zeros_like()
        grads["w"][...] = self.coeffs
        return grads


def test_finite_diff_linear_model_noise_floor():
    model = LinearModel(np.linspace(0.5, 2.0, 40))
    err = finite_diff_check(model, tokens=(), eps=1e-5, samples=40, seed=0)
    assert err < 1e-9


def test_finite_diff_detects_wrong_gradient():
    model = LinearModel(np.ones(10))
    model.coeffs = model.coeffs.copy()

    class Broken(LinearModel):
        def __init__(self):
            super().__init__(np.ones(10))

        def gradients(self, tokens):
            grads = super().gradients(tokens)
            grads["w"][3] = 2.0  # wrong by 2x
            return grads

    err = finite_diff_check(Broken(), tokens=(), eps=1e-5, samples=10, seed=0)
    assert err > 0.4


def test_param_store_duplicate_name():
    store = ParamStore()
    store.add("w", (2,))
    with pytest.raises(ValueError):
        store.add("w", (2,))


def test_param_store_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    store = ParamStore("fp32")
    store.add("a", (3, 4), init=uniform_init(rng))
    store.add("b", (5,), init=uniform_init(rng), trainable=False)
    path = tmp_path / "model.ckpt"
    store.save(path, metadata={"kind": "test", "n": 3})
    loaded, meta = ParamStore.load(path)
    assert meta == {"kind": "test", "n": 3}
    assert loaded.names() == ["a", "b"]
    assert not loaded.is_trainable("b")
    for name in store.names():
        assert np.array_equal(loaded[name], store[name])


def test_param_store_checkpoint_byte_stable(tmp_path):
    rng = np.random.default_rng(1)
    store = ParamStore("fp64")
    store.add("w", (7, 3), init=uniform_init(rng))
    p1, p2 = tmp_path / "one.ckpt", tmp_path / "two.ckpt"
    store.save(p1, metadata={"x": 1})
    store.save(p2, metadata={"x": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_param_store_cast_and_clone():
    store = make_store(w=[1.0, 2.0])
    clone = store.clone()
    clone["w"][0] = 9.0
    assert store["w"][0] == 1.0
    hi = store.cast("fp80")
    assert hi["w"].dtype == np.longdouble


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(bptt_span=0)
    with pytest.raises(ValueError):
        TrainConfig(clip_threshold=0.0)
    with pytest.raises(ValueError):
        TrainConfig(precision="fp16")
    assert TrainConfig().dtype == np.float32
