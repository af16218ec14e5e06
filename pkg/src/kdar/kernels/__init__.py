"""Hot-loop kernels with backend selection at import time.

The compiled Cython extension is preferred; the pure-numpy module is the
fallback. KDAR_KERNELS=numpy|cython forces a backend (cython raises if the
extension is not built). Both backends share in-place signatures; the
allocating wrappers below are what the rest of the package calls.
"""

import os

import numpy as np

from . import _numpy

_FORCED = os.environ.get("KDAR_KERNELS", "").strip().lower()

if _FORCED == "numpy":
    _backend = _numpy
elif _FORCED == "cython":
    from . import _speedups as _backend
else:
    try:
        from . import _speedups as _backend
    except ImportError:
        _backend = _numpy

BACKEND = "cython" if _backend is not _numpy else "numpy"


def available_backends():
    """Backend modules importable in this environment, keyed by name."""
    backends = {"numpy": _numpy}
    try:
        from . import _speedups

        backends["cython"] = _speedups
    except ImportError:
        pass
    return backends


def _as_index(ids):
    return np.ascontiguousarray(ids, dtype=np.int64)


def scatter_add_rows(out, ids, rows, impl=None):
    """out[ids[k], :] += rows[k, :] with duplicate ids accumulating."""
    (impl or _backend).scatter_add_rows(out, _as_index(ids), rows)
    return out


def segment_weighted_sum(rows, weights, segments, num_segments, impl=None):
    """out[s] = sum over rows k with segments[k] == s of weights[k] * rows[k]."""
    out = np.zeros((num_segments, rows.shape[1]), dtype=rows.dtype)
    (impl or _backend).segment_weighted_sum(out, rows, weights, _as_index(segments))
    return out


def segment_gather_scale(grad_out, weights, segments, impl=None):
    """Row gradient of segment_weighted_sum: weights[k] * grad_out[segments[k]]."""
    out = np.empty((len(weights), grad_out.shape[1]), dtype=grad_out.dtype)
    (impl or _backend).segment_gather_scale(out, grad_out, weights, _as_index(segments))
    return out


def segment_dot_rows(grad_out, rows, segments, impl=None):
    """Weight gradient of segment_weighted_sum: grad_out[segments[k]] . rows[k]."""
    out = np.empty(rows.shape[0], dtype=rows.dtype)
    (impl or _backend).segment_dot_rows(out, grad_out, rows, _as_index(segments))
    return out


def grouped_softmax(logits, segments, num_segments, impl=None):
    """Softmax within each segment; max-subtracted so large logits cannot overflow."""
    out = np.empty_like(logits)
    (impl or _backend).grouped_softmax(out, logits, _as_index(segments), num_segments)
    return out


def grouped_softmax_backward(alpha, grad_alpha, segments, num_segments, impl=None):
    """Jacobian-vector product of grouped_softmax."""
    out = np.empty_like(alpha)
    (impl or _backend).grouped_softmax_backward(out, alpha, grad_alpha, _as_index(segments), num_segments)
    return out
