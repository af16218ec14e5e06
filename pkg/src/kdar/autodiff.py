"""Minimal reverse-mode differentiation over dense numpy arrays.

A Tape records operations in construction order, which is already a
topological order, so backward() is a single reverse sweep that visits each
node exactly once. Leaves bind to Parameter objects; their gradients
accumulate into Parameter.grad. Everything runs in the dtype of the
parameter store (float32 for training, float64 for gradient verification).
"""

import numpy as np

from . import kernels
from .errors import NumericalFailure


class Variable:
    """One tape node: a value, its lazily allocated gradient, and a backward rule."""

    __slots__ = ("data", "grad", "_tape", "_backward", "_param")

    def __init__(self, data, tape, backward=None, param=None):
        self.data = data
        self.grad = None
        self._tape = tape
        self._backward = backward
        self._param = param

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Variable):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__


class Tape:
    """Append-only operation record; single-owner during recording.

    check_finite makes every committed op validate its output and raise
    NumericalFailure on NaN/Inf, which the trainer turns into an abort.
    """

    def __init__(self, check_finite=True):
        self.check_finite = check_finite
        self._nodes = []

    def _record(self, data, backward=None, param=None):
        if self.check_finite and not np.all(np.isfinite(data)):
            raise NumericalFailure("non-finite values produced during forward pass")
        var = Variable(data, self, backward=backward, param=param)
        self._nodes.append(var)
        return var

    def leaf(self, param):
        """Bind a Parameter (or a plain array constant) as a leaf node."""
        if hasattr(param, "grad"):
            return self._record(param.data, param=param)
        return self._record(np.asarray(param))

    def backward(self, root):
        """Reverse sweep from a scalar root; leaf grads land in Parameter.grad.

        The tape is cleared afterwards and must not be reused.
        """
        if root.data.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
        root.grad = np.ones_like(root.data)
        for var in reversed(self._nodes):
            if var.grad is None:
                continue
            if self.check_finite and not np.all(np.isfinite(var.grad)):
                raise NumericalFailure("non-finite gradient during backward pass")
            if var._backward is not None:
                var._backward(var.grad)
            elif var._param is not None:
                var._param.grad += var.grad
        self._nodes.clear()


# ---------------------------------------------------------------------------
# ops


def gather_rows(x, ids):
    """Row lookup out[k] = x[ids[k]]; backward scatter-adds into x."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= x.data.shape[0]):
        raise IndexError("gather_rows: index out of range")
    out_data = x.data[ids]

    def backward(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        kernels.scatter_add_rows(x.grad, ids, np.ascontiguousarray(g))

    return x._tape._record(out_data, backward)


def weighted_segment_sum(rows, weights, segments, num_segments):
    """out[s] = sum_{k: seg(k)=s} w_k * rows[k]; weights may be a Variable."""
    segments = np.asarray(segments, dtype=np.int64)
    w_is_var = isinstance(weights, Variable)
    w = weights.data if w_is_var else np.asarray(weights, dtype=rows.data.dtype)
    out_data = kernels.segment_weighted_sum(np.ascontiguousarray(rows.data), w, segments, num_segments)

    def backward(g):
        g = np.ascontiguousarray(g)
        rows._accumulate(kernels.segment_gather_scale(g, w, segments))
        if w_is_var:
            weights._accumulate(kernels.segment_dot_rows(g, np.ascontiguousarray(rows.data), segments))

    return rows._tape._record(out_data, backward)


def add(a, b):
    def backward(g):
        a._accumulate(g)
        b._accumulate(g)

    return a._tape._record(a.data + b.data, backward)


def sub(a, b):
    def backward(g):
        a._accumulate(g)
        b._accumulate(-g)

    return a._tape._record(a.data - b.data, backward)


def mul(a, b):
    """Element-wise product; shapes must match."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")

    def backward(g):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    return a._tape._record(a.data * b.data, backward)


def scale(a, c):
    c = float(c)

    def backward(g):
        a._accumulate(g * c)

    return a._tape._record(a.data * a.data.dtype.type(c), backward)


def matmul_rows(rows, w):
    """Row-wise right multiplication rows @ w."""
    if rows.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"matmul_rows: shape mismatch {rows.data.shape} vs {w.data.shape}")

    def backward(g):
        rows._accumulate(g @ w.data.T)
        w._accumulate(rows.data.T @ g)

    return rows._tape._record(rows.data @ w.data, backward)


def rowwise_dot(a, b):
    """Per-row inner product of two equally shaped 2-D tensors."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"rowwise_dot: shape mismatch {a.data.shape} vs {b.data.shape}")

    def backward(g):
        a._accumulate(g[:, None] * b.data)
        b._accumulate(g[:, None] * a.data)

    return a._tape._record(np.einsum("ij,ij->i", a.data, b.data), backward)


def grouped_softmax(logits, segments, num_segments):
    """Softmax within each segment of a 1-D logit vector."""
    segments = np.asarray(segments, dtype=np.int64)
    alpha = kernels.grouped_softmax(np.ascontiguousarray(logits.data), segments, num_segments)

    def backward(g):
        logits._accumulate(
            kernels.grouped_softmax_backward(alpha, np.ascontiguousarray(g), segments, num_segments)
        )

    return logits._tape._record(alpha, backward)


def cosine_similarity(a, b):
    """Cosine along the last axis; zero vectors yield 0 with zero gradient.

    1-D inputs give a scalar, 2-D inputs give one value per row.
    """
    na = np.linalg.norm(a.data, axis=-1)
    nb = np.linalg.norm(b.data, axis=-1)
    ok = (na > 0) & (nb > 0)
    denom = np.where(ok, na * nb, 1.0).astype(a.data.dtype)
    dot = np.sum(a.data * b.data, axis=-1)
    cos = np.where(ok, dot / denom, 0.0).astype(a.data.dtype)

    def backward(g):
        g = g * ok  # degenerate rows stay at zero gradient
        ga = g[..., None] * (b.data / denom[..., None] - cos[..., None] * a.data / np.where(ok, na * na, 1.0).astype(a.data.dtype)[..., None])
        gb = g[..., None] * (a.data / denom[..., None] - cos[..., None] * b.data / np.where(ok, nb * nb, 1.0).astype(a.data.dtype)[..., None])
        a._accumulate(ga)
        b._accumulate(gb)

    return a._tape._record(cos, backward)


def log_sigmoid(x):
    """Numerically stable ln(sigmoid(x)) = -softplus(-x)."""
    d = x.data
    out = np.where(d >= 0, -np.log1p(np.exp(-np.abs(d))), d - np.log1p(np.exp(-np.abs(d))))
    sig_neg = np.where(d >= 0, np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))), 1.0 / (1.0 + np.exp(-np.abs(d))))
    sig_neg = sig_neg.astype(d.dtype)

    def backward(g):
        x._accumulate(g * sig_neg)

    return x._tape._record(out.astype(d.dtype), backward)


def mean(x):
    n = x.data.size

    def backward(g):
        x._accumulate(np.full_like(x.data, g / n))

    return x._tape._record(np.asarray(x.data.mean(), dtype=x.data.dtype), backward)


def sum_squares(x):
    def backward(g):
        x._accumulate((2.0 * g) * x.data)

    return x._tape._record(np.asarray(np.sum(x.data * x.data), dtype=x.data.dtype), backward)


def concat_cols(a, b):
    """Column-wise concatenation [a || b]."""
    da = a.data.shape[1]

    def backward(g):
        a._accumulate(g[:, :da])
        b._accumulate(g[:, da:])

    return a._tape._record(np.concatenate([a.data, b.data], axis=1), backward)


# ---------------------------------------------------------------------------
# verification


def finite_difference_check(loss_fn, store, samples=64, h=1e-4, tol=1e-3, rng=None):
    """Compare analytic gradients with central differences on sampled coordinates.

    loss_fn() must build a fresh tape over `store`, return the root Variable,
    and leave gradients in the parameters after tape.backward. The relative
    error |analytic - numeric| / max(1, |analytic|) must stay within tol.
    Use a float64 store; float32 cannot reach these tolerances.

    Returns a report dict with per-coordinate records and an overall flag.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    store.zero_grads()
    loss_fn()
    grads = {name: p.grad.copy() for name, p in store.params.items()}
    store.zero_grads()

    coords = []
    for name, p in store.params.items():
        for flat in range(p.data.size):
            coords.append((name, flat))
    if samples is not None and samples < len(coords):
        picked = rng.choice(len(coords), size=samples, replace=False)
        coords = [coords[k] for k in picked]

    records = []
    worst = 0.0
    for name, flat in coords:
        p = store.params[name]
        orig = p.data.flat[flat]
        p.data.flat[flat] = orig + h
        up = _loss_value(loss_fn, store)
        p.data.flat[flat] = orig - h
        down = _loss_value(loss_fn, store)
        p.data.flat[flat] = orig
        numeric = (up - down) / (2.0 * h)
        analytic = grads[name].flat[flat]
        rel = abs(analytic - numeric) / max(1.0, abs(analytic))
        worst = max(worst, rel)
        records.append({"param": name, "index": int(flat), "analytic": float(analytic),
                        "numeric": float(numeric), "rel_err": float(rel)})
    failures = [r for r in records if r["rel_err"] > tol]
    return {"passed": not failures, "checked": len(records), "worst_rel_err": worst,
            "failures": failures, "records": records}


def _loss_value(loss_fn, store):
    root = loss_fn()
    value = float(root.data)
    store.zero_grads()  # loss_fn ran backward; discard those gradients
    return value
