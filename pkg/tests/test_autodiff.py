"""Tape mechanics and per-op gradients against central finite differences."""

import math

import numpy as np
import pytest

from kdar import autodiff as ad
from kdar.errors import NumericalFailure
from kdar.params import ParameterStore


def fd_store(arrays):
    """Float64 store holding the named arrays as parameters."""
    store = ParameterStore(dtype=np.float64)
    for name, arr in arrays.items():
        store.add(name, arr)
    return store


def check_op(store, build_loss, tol=1e-4, samples=None):
    """build_loss(tape, leaves) -> scalar Variable; verified coordinatewise."""

    def loss_fn():
        tape = ad.Tape()
        leaves = {name: tape.leaf(p) for name, p in store.params.items()}
        root = build_loss(tape, leaves)
        tape.backward(root)
        return root

    report = ad.finite_difference_check(loss_fn, store, samples=samples, tol=tol)
    assert report["passed"], report["failures"][:3]


def project_to_scalar(tape, out, rng):
    """Contract any output to a scalar with a fixed random weighting so that
    every coordinate carries gradient signal."""
    w = tape.leaf(rng.normal(size=out.data.shape))
    if out.data.ndim == 2:
        return ad.mean(ad.mul(out, w))
    return ad.mean(ad.mul(out, w))


# ---------------------------------------------------------------------------
# tape mechanics


def test_backward_rejects_nonscalar_root():
    store = fd_store({"x": np.ones((2, 2))})
    tape = ad.Tape()
    x = tape.leaf(store["x"])
    with pytest.raises(ValueError):
        tape.backward(x)


def test_nonfinite_forward_raises():
    store = fd_store({"x": np.full((2, 2), 1e308)})
    tape = ad.Tape()
    x = tape.leaf(store["x"])
    with np.errstate(over="ignore"), pytest.raises(NumericalFailure):
        ad.add(x, x)  # overflows to inf


def test_check_finite_can_be_disabled():
    store = fd_store({"x": np.full((2, 2), 1e308)})
    tape = ad.Tape(check_finite=False)
    x = tape.leaf(store["x"])
    with np.errstate(over="ignore"):
        y = ad.add(x, x)
    assert np.isinf(y.data).all()


def test_leaf_gradient_accumulates_into_parameter():
    store = fd_store({"x": np.arange(4.0).reshape(2, 2)})
    tape = ad.Tape()
    x = tape.leaf(store["x"])
    tape.backward(ad.mean(ad.scale(x, 3.0)))
    np.testing.assert_allclose(store["x"].grad, 3.0 / 4.0)


def test_gradient_linearity():
    # grad(a*L1 + b*L2) = a*grad(L1) + b*grad(L2)
    rng = np.random.default_rng(5)
    x0 = rng.normal(size=(3, 4))

    def grads(a, b):
        store = fd_store({"x": x0})
        tape = ad.Tape()
        x = tape.leaf(store["x"])
        l1 = ad.mean(ad.mul(x, x))
        l2 = ad.sum_squares(x)
        tape.backward(ad.add(ad.scale(l1, a), ad.scale(l2, b)))
        return store["x"].grad.copy()

    g = grads(2.0, 0.5)
    np.testing.assert_allclose(g, 2.0 * grads(1.0, 0.0) + 0.5 * grads(0.0, 1.0),
                               atol=1e-12)


def test_tape_replay_is_bit_identical():
    rng = np.random.default_rng(9)
    x0 = rng.normal(size=(4, 3))
    ids = np.array([0, 2, 2, 1])
    seg = np.array([0, 0, 1, 1])

    def run():
        store = fd_store({"x": x0})
        tape = ad.Tape()
        x = tape.leaf(store["x"])
        rows = ad.gather_rows(x, ids)
        out = ad.weighted_segment_sum(rows, np.ones(4), seg, 2)
        root = ad.sum_squares(out)
        tape.backward(root)
        return float(root.data), store["x"].grad.copy()

    loss_a, grad_a = run()
    loss_b, grad_b = run()
    assert loss_a == loss_b
    np.testing.assert_array_equal(grad_a, grad_b)


# ---------------------------------------------------------------------------
# op semantics


def test_gather_rows_duplicates_accumulate():
    store = fd_store({"x": np.arange(6.0).reshape(3, 2)})
    tape = ad.Tape()
    x = tape.leaf(store["x"])
    out = ad.gather_rows(x, [0, 0])
    np.testing.assert_array_equal(out.data, [[0, 1], [0, 1]])
    tape.backward(ad.scale(ad.mean(out), 4.0))  # upstream grad = ones
    np.testing.assert_allclose(store["x"].grad, [[2, 2], [0, 0], [0, 0]])


def test_gather_rows_empty_ids():
    tape = ad.Tape()
    x = tape.leaf(np.ones((3, 2)))
    out = ad.gather_rows(x, np.array([], dtype=np.int64))
    assert out.data.shape == (0, 2)


def test_gather_rows_out_of_range():
    tape = ad.Tape()
    x = tape.leaf(np.ones((3, 2)))
    with pytest.raises(IndexError):
        ad.gather_rows(x, [3])
    with pytest.raises(IndexError):
        ad.gather_rows(x, [-1])


def test_mul_identity_and_zero():
    tape = ad.Tape()
    a = tape.leaf(np.array([[1.5, -2.0]]))
    one = tape.leaf(np.ones((1, 2)))
    zero = tape.leaf(np.zeros((1, 2)))
    np.testing.assert_array_equal(ad.mul(a, one).data, a.data)
    np.testing.assert_array_equal(ad.mul(a, zero).data, np.zeros((1, 2)))


def test_mul_shape_mismatch():
    tape = ad.Tape()
    a = tape.leaf(np.ones((2, 2)))
    b = tape.leaf(np.ones((3, 2)))
    with pytest.raises(ValueError):
        ad.mul(a, b)


def test_matmul_rows_identity_and_zero():
    rng = np.random.default_rng(2)
    rows = rng.normal(size=(4, 3))
    tape = ad.Tape()
    r = tape.leaf(rows)
    eye = tape.leaf(np.eye(3))
    zero = tape.leaf(np.zeros((3, 3)))
    np.testing.assert_allclose(ad.matmul_rows(r, eye).data, rows, atol=1e-15)
    np.testing.assert_array_equal(ad.matmul_rows(r, zero).data, np.zeros((4, 3)))
    with pytest.raises(ValueError):
        ad.matmul_rows(r, tape.leaf(np.zeros((4, 4))))


def test_grouped_softmax_values():
    tape = ad.Tape()
    logits = tape.leaf(np.array([0.0, 0.0, 5.0]))
    out = ad.grouped_softmax(logits, np.array([0, 0, 1]), 2)
    np.testing.assert_allclose(out.data[:2], [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(out.data[2], 1.0, atol=1e-12)


def test_grouped_softmax_direct_formula():
    # segment logits [1, 2, 3] -> exp-normalized
    tape = ad.Tape()
    logits = tape.leaf(np.array([1.0, 2.0, 3.0]))
    out = ad.grouped_softmax(logits, np.zeros(3, dtype=np.int64), 1)
    e = np.exp(np.array([1.0, 2.0, 3.0]) - 3.0)
    np.testing.assert_allclose(out.data, e / e.sum(), atol=1e-12)


def test_cosine_similarity_values():
    tape = ad.Tape()
    a = tape.leaf(np.array([3.0, 4.0]))
    np.testing.assert_allclose(ad.cosine_similarity(a, tape.leaf(np.array([3.0, 4.0]))).data,
                               1.0, atol=1e-12)
    tape = ad.Tape()
    a = tape.leaf(np.array([1.0, 0.0]))
    b = tape.leaf(np.array([0.0, 1.0]))
    np.testing.assert_allclose(ad.cosine_similarity(a, b).data, 0.0, atol=1e-15)


def test_cosine_similarity_zero_vector_convention():
    store = fd_store({"a": np.array([[0.0, 0.0], [1.0, 2.0]])})
    tape = ad.Tape()
    a = tape.leaf(store["a"])
    b = tape.leaf(np.array([[1.0, 1.0], [2.0, 4.0]]))
    cos = ad.cosine_similarity(a, b)
    assert cos.data[0] == 0.0
    np.testing.assert_allclose(cos.data[1], 1.0, atol=1e-12)
    tape.backward(ad.mean(cos))
    # degenerate row gets zero gradient, not NaN
    np.testing.assert_array_equal(store["a"].grad[0], [0.0, 0.0])
    assert np.all(np.isfinite(store["a"].grad))


def test_cosine_similarity_bounds_and_symmetry():
    for trial in range(20):
        rng = np.random.default_rng(trial)
        x = rng.normal(size=(5, 4)) * rng.uniform(0.1, 100)
        y = rng.normal(size=(5, 4))
        tape = ad.Tape()
        c1 = ad.cosine_similarity(tape.leaf(x), tape.leaf(y))
        c2 = ad.cosine_similarity(tape.leaf(y), tape.leaf(x))
        assert np.all(c1.data <= 1.0 + 1e-12) and np.all(c1.data >= -1.0 - 1e-12)
        np.testing.assert_allclose(c1.data, c2.data, atol=1e-12)


def test_log_sigmoid_values():
    tape = ad.Tape()
    x = tape.leaf(np.array([0.0, 50.0, -50.0]))
    out = ad.log_sigmoid(x)
    np.testing.assert_allclose(out.data[0], -math.log(2.0), atol=1e-12)
    np.testing.assert_allclose(out.data[1], -math.exp(-50.0), rtol=1e-9)
    np.testing.assert_allclose(out.data[2], -50.0, atol=1e-6)
    assert np.all(np.isfinite(out.data))


def test_concat_cols_layout():
    tape = ad.Tape()
    a = tape.leaf(np.array([[1.0, 2.0]]))
    b = tape.leaf(np.array([[3.0, 4.0]]))
    out = ad.concat_cols(a, b)
    np.testing.assert_array_equal(out.data, [[1, 2, 3, 4]])


def test_scale_by_python_scalar_operator():
    tape = ad.Tape()
    a = tape.leaf(np.array([2.0]))
    assert (3 * a).data[0] == 6.0
    assert (a * 3).data[0] == 6.0


# ---------------------------------------------------------------------------
# finite-difference sweeps, one per op


def test_fd_gather_and_segment_sum():
    rng = np.random.default_rng(11)
    store = fd_store({"x": rng.normal(size=(5, 3))})
    ids = np.array([0, 2, 2, 4, 1, 0])
    seg = np.array([0, 1, 1, 2, 0, 2])
    weights = rng.normal(size=6)
    proj = rng.normal(size=(3, 3))

    def loss(tape, leaves):
        rows = ad.gather_rows(leaves["x"], ids)
        out = ad.weighted_segment_sum(rows, weights, seg, 3)
        return ad.mean(ad.mul(out, tape.leaf(proj)))

    check_op(store, loss)


def test_fd_segment_sum_variable_weights():
    rng = np.random.default_rng(12)
    store = fd_store({"x": rng.normal(size=(6, 2)), "w_flat": rng.normal(size=(6, 1))})
    seg = np.array([0, 0, 1, 1, 2, 2])
    proj = rng.normal(size=(3, 2))

    def loss(tape, leaves):
        w = ad.rowwise_dot(leaves["w_flat"], tape.leaf(np.ones((6, 1))))
        out = ad.weighted_segment_sum(leaves["x"], w, seg, 3)
        return ad.mean(ad.mul(out, tape.leaf(proj)))

    check_op(store, loss)


def test_fd_mul_add_sub_scale():
    rng = np.random.default_rng(13)
    store = fd_store({"a": rng.normal(size=(4, 3)), "b": rng.normal(size=(4, 3))})

    def loss(tape, leaves):
        out = ad.sub(ad.mul(leaves["a"], leaves["b"]),
                     ad.scale(ad.add(leaves["a"], leaves["b"]), 0.3))
        return ad.mean(ad.mul(out, out))

    check_op(store, loss)


def test_fd_matmul_and_rowwise_dot():
    rng = np.random.default_rng(14)
    store = fd_store({"rows": rng.normal(size=(5, 4)), "w": rng.normal(size=(4, 4))})
    other = rng.normal(size=(5, 4))

    def loss(tape, leaves):
        proj = ad.matmul_rows(leaves["rows"], leaves["w"])
        return ad.mean(ad.rowwise_dot(proj, tape.leaf(other)))

    check_op(store, loss)


def test_fd_grouped_softmax():
    rng = np.random.default_rng(15)
    store = fd_store({"logits_rows": rng.normal(size=(8, 1))})
    seg = np.array([0, 0, 0, 1, 1, 2, 2, 2])
    ones = np.ones((8, 1))
    rows = rng.normal(size=(8, 2))
    proj = rng.normal(size=(3, 2))

    def loss(tape, leaves):
        logits = ad.rowwise_dot(leaves["logits_rows"], tape.leaf(ones))
        alpha = ad.grouped_softmax(logits, seg, 3)
        out = ad.weighted_segment_sum(tape.leaf(rows), alpha, seg, 3)
        return ad.mean(ad.mul(out, tape.leaf(proj)))

    check_op(store, loss)


def test_fd_cosine_similarity():
    rng = np.random.default_rng(16)
    store = fd_store({"a": rng.normal(size=(6, 4)), "b": rng.normal(size=(6, 4))})

    def loss(tape, leaves):
        return ad.mean(ad.cosine_similarity(leaves["a"], leaves["b"]))

    check_op(store, loss)


def test_fd_log_sigmoid_mean_sum_squares():
    rng = np.random.default_rng(17)
    store = fd_store({"x": rng.normal(size=(5, 3))})

    def loss(tape, leaves):
        s = ad.log_sigmoid(ad.rowwise_dot(leaves["x"], leaves["x"]))
        return ad.add(ad.mean(s), ad.scale(ad.sum_squares(leaves["x"]), 0.01))

    check_op(store, loss)


def test_fd_concat_cols():
    rng = np.random.default_rng(18)
    store = fd_store({"a": rng.normal(size=(4, 2)), "b": rng.normal(size=(4, 3))})
    other = rng.normal(size=(4, 5))

    def loss(tape, leaves):
        out = ad.concat_cols(leaves["a"], leaves["b"])
        return ad.mean(ad.rowwise_dot(out, tape.leaf(other)))

    check_op(store, loss)


# ---------------------------------------------------------------------------
# the verifier itself


def test_verifier_linear_loss_exact():
    store = fd_store({"x": np.arange(6.0).reshape(2, 3)})

    def loss_fn():
        tape = ad.Tape()
        x = tape.leaf(store["x"])
        root = ad.scale(ad.mean(x), 6.0)  # = sum of entries
        tape.backward(root)
        return root

    report = ad.finite_difference_check(loss_fn, store, samples=None, tol=1e-9)
    assert report["passed"]
    assert all(abs(r["analytic"] - 1.0) < 1e-12 for r in report["records"])


def test_verifier_quadratic_loss():
    store = fd_store({"x": np.array([[1.0, -2.0, 0.5]])})

    def loss_fn():
        tape = ad.Tape()
        x = tape.leaf(store["x"])
        root = ad.sum_squares(x)
        tape.backward(root)
        return root

    report = ad.finite_difference_check(loss_fn, store, samples=None, tol=1e-6)
    assert report["passed"]
    for rec, expected in zip(report["records"], [2.0, -4.0, 1.0]):
        np.testing.assert_allclose(rec["analytic"], expected, atol=1e-12)


def test_verifier_flags_wrong_gradient():
    store = fd_store({"x": np.array([[1.0, 2.0]])})

    def loss_fn():
        tape = ad.Tape()
        x = tape.leaf(store["x"])
        root = ad.sum_squares(x)
        tape.backward(root)
        store["x"].grad *= 1.5  # corrupt on purpose
        return root

    report = ad.finite_difference_check(loss_fn, store, samples=None, tol=1e-3)
    assert not report["passed"]
    assert report["failures"]


def test_verifier_subsampling():
    rng = np.random.default_rng(20)
    store = fd_store({"x": rng.normal(size=(10, 10))})

    def loss_fn():
        tape = ad.Tape()
        x = tape.leaf(store["x"])
        root = ad.sum_squares(x)
        tape.backward(root)
        return root

    report = ad.finite_difference_check(loss_fn, store, samples=7, tol=1e-6,
                                        rng=np.random.default_rng(0))
    assert report["checked"] == 7
    assert report["passed"]
