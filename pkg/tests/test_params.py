"""Initialization, Adam stepping, and the binary checkpoint format."""

import numpy as np
import pytest

from kdar.errors import CheckpointError
from kdar.params import (Adam, CHECKPOINT_MAGIC, Parameter, ParameterStore,
                         load_checkpoint, read_checkpoint, save_checkpoint,
                         xavier_uniform)


def test_xavier_bound_and_seeding():
    rng = np.random.default_rng(0)
    w = xavier_uniform((30, 50), rng, np.float64)
    bound = np.sqrt(6.0 / 80.0)
    assert np.all(np.abs(w) <= bound)
    assert np.abs(w).max() > 0.9 * bound  # actually fills the range
    assert abs(w.mean()) < 0.1 * bound
    w2 = xavier_uniform((30, 50), np.random.default_rng(0), np.float64)
    np.testing.assert_array_equal(w, w2)


def test_xavier_one_dim_shape():
    w = xavier_uniform((10,), np.random.default_rng(1), np.float32)
    assert w.shape == (10,) and w.dtype == np.float32
    assert np.all(np.abs(w) <= np.sqrt(6.0 / 20.0))


def test_store_for_model_names_and_shapes():
    store = ParameterStore.for_model(num_users=4, num_items=3, num_entities=7,
                                     num_relations=5, embed_dim=8,
                                     rng=np.random.default_rng(2))
    shapes = {name: p.shape for name, p in store.params.items()}
    assert shapes == {
        "user_cf_emb": (4, 8), "item_cf_emb": (3, 8), "entity_emb": (7, 8),
        "relation_emb": (5, 8), "attn_key": (8, 8), "attn_query": (8, 8)}
    assert store.dtype == np.float32


def test_store_rejects_duplicate_name():
    store = ParameterStore()
    store.add("w", np.zeros((2, 2)))
    with pytest.raises(ValueError):
        store.add("w", np.zeros((2, 2)))


def test_zero_grads():
    store = ParameterStore(dtype=np.float64)
    p = store.add("w", np.ones((2, 2)))
    p.grad += 5.0
    store.zero_grads()
    assert not p.grad.any()


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_gradient_is_identity():
    store = ParameterStore(dtype=np.float64)
    p = store.add("w", np.array([[1.0, -2.0]]))
    before = p.data.copy()
    Adam(store, lr=0.1).step()
    np.testing.assert_array_equal(p.data, before)


def test_adam_first_step_hand_oracle():
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    g = 3.0
    store = ParameterStore(dtype=np.float64)
    p = store.add("w", np.array([1.0]))
    p.grad[...] = g
    opt = Adam(store, lr=lr, beta1=b1, beta2=b2, eps=eps)
    opt.step()
    m = (1 - b1) * g
    v = (1 - b2) * g * g
    expected = 1.0 - lr * (m / (1 - b1)) / (np.sqrt(v / (1 - b2)) + eps)
    np.testing.assert_allclose(p.data[0], expected, rtol=1e-14)
    assert opt.step_count == 1
    assert not p.grad.any()  # gradients zeroed by the step


def test_adam_first_step_magnitude_is_lr():
    # bias correction makes step one a near-sign update of size lr
    for g in (1e-6, 1.0, 1e6):
        store = ParameterStore(dtype=np.float64)
        p = store.add("w", np.array([0.0]))
        p.grad[...] = g
        Adam(store, lr=0.05).step()
        np.testing.assert_allclose(abs(p.data[0]), 0.05, rtol=2e-2)
        assert p.data[0] < 0  # moves against the gradient


def test_adam_converges_on_quadratic():
    target = np.array([2.0, -1.0, 0.5])
    store = ParameterStore(dtype=np.float64)
    p = store.add("x", np.zeros(3))
    opt = Adam(store, lr=0.1)
    losses = []
    for _ in range(100):
        losses.append(float(np.sum((p.data - target) ** 2)))
        p.grad[...] = 2.0 * (p.data - target)
        opt.step()
    assert losses[-1] < 1e-2 * losses[0]
    assert losses[-1] < losses[10]


# ---------------------------------------------------------------------------
# checkpoints


def small_store(dtype=np.float32, seed=4):
    rng = np.random.default_rng(seed)
    store = ParameterStore(dtype=dtype)
    store.add("emb", rng.normal(size=(3, 2)))
    store.add("vec", rng.normal(size=(4,)))
    return store


def test_checkpoint_roundtrip(tmp_path):
    store = small_store()
    path = tmp_path / "ck.bin"
    save_checkpoint(path, store)
    fresh = small_store(seed=99)
    load_checkpoint(path, fresh)
    for name in store.params:
        np.testing.assert_array_equal(fresh[name].data, store[name].data)


def test_checkpoint_roundtrip_with_adam(tmp_path):
    store = small_store()
    opt = Adam(store, lr=0.01)
    store["emb"].grad[...] = 1.0
    opt.step()
    opt.step()
    path = tmp_path / "ck.bin"
    save_checkpoint(path, store, adam=opt)
    fresh = small_store(seed=99)
    fresh_opt = Adam(fresh, lr=0.01)
    load_checkpoint(path, fresh, adam=fresh_opt)
    assert fresh_opt.step_count == 2
    for name in store.params:
        np.testing.assert_array_equal(fresh[name].m, store[name].m)
        np.testing.assert_array_equal(fresh[name].v, store[name].v)


def test_checkpoint_float64_store_downcasts(tmp_path):
    store = small_store(dtype=np.float64)
    path = tmp_path / "ck.bin"
    save_checkpoint(path, store)
    entries = read_checkpoint(path)
    np.testing.assert_array_equal(entries["emb"], store["emb"].data.astype(np.float32))


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "ck.bin"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(CheckpointError, match="magic"):
        read_checkpoint(path)


def test_checkpoint_bad_version(tmp_path):
    import struct
    path = tmp_path / "ck.bin"
    path.write_bytes(CHECKPOINT_MAGIC + struct.pack("<II", 999, 0))
    with pytest.raises(CheckpointError, match="version"):
        read_checkpoint(path)


def test_checkpoint_truncation_detected(tmp_path):
    store = small_store()
    path = tmp_path / "ck.bin"
    save_checkpoint(path, store)
    raw = path.read_bytes()
    for cut in (6, len(raw) // 2, len(raw) - 3):
        path.write_bytes(raw[:cut])
        with pytest.raises(CheckpointError, match="truncated"):
            read_checkpoint(path)


def test_checkpoint_missing_parameter(tmp_path):
    store = small_store()
    path = tmp_path / "ck.bin"
    save_checkpoint(path, store)
    bigger = small_store(seed=99)
    bigger.add("extra", np.zeros((2, 2)))
    with pytest.raises(CheckpointError, match="missing"):
        load_checkpoint(path, bigger)


def test_checkpoint_shape_mismatch(tmp_path):
    store = small_store()
    path = tmp_path / "ck.bin"
    save_checkpoint(path, store)
    other = ParameterStore()
    other.add("emb", np.zeros((3, 5)))
    other.add("vec", np.zeros(4))
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(path, other)


def test_checkpoint_adam_state_absent(tmp_path):
    store = small_store()
    path = tmp_path / "ck.bin"
    save_checkpoint(path, store)  # no optimizer state
    fresh = small_store(seed=99)
    with pytest.raises(CheckpointError, match="optimizer"):
        load_checkpoint(path, fresh, adam=Adam(fresh))


def test_checkpoint_rewrite_is_byte_identical(tmp_path):
    store = small_store()
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    save_checkpoint(a, store)
    save_checkpoint(b, store)
    assert a.read_bytes() == b.read_bytes()


def test_parameter_buffers_match_shape():
    p = Parameter("w", np.zeros((3, 4), dtype=np.float32))
    assert p.grad.shape == (3, 4) and p.m.shape == (3, 4) and p.v.shape == (3, 4)
    assert p.shape == (3, 4)
