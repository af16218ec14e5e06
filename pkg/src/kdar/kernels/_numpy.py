"""Pure-numpy kernel implementations.

Fallback backend used when the compiled extension is unavailable (or forced
via KDAR_KERNELS=numpy). All functions write into preallocated outputs and
mirror the compiled signatures exactly. Accumulation visits elements in index
order, so float64 results are bit-identical to the compiled backend; float32
results may differ in the last bits because bincount accumulates in float64.
"""

import numpy as np


def scatter_add_rows(out, ids, rows):
    # out[ids[k], :] += rows[k, :], duplicates accumulate
    np.add.at(out, ids, rows)


def segment_weighted_sum(out, rows, weights, segments):
    # out[s, :] = sum_{k: segments[k]=s} weights[k] * rows[k, :]
    weighted = rows * weights[:, None]
    num_segments = out.shape[0]
    for j in range(out.shape[1]):
        out[:, j] += np.bincount(segments, weights=weighted[:, j], minlength=num_segments)


def segment_gather_scale(out, grad_out, weights, segments):
    # out[k, :] = weights[k] * grad_out[segments[k], :]
    np.multiply(grad_out[segments], weights[:, None], out=out)


def segment_dot_rows(out, grad_out, rows, segments):
    # out[k] = grad_out[segments[k], :] . rows[k, :]
    np.einsum("ij,ij->i", grad_out[segments], rows, out=out)


def grouped_softmax(out, logits, segments, num_segments):
    # max-subtracted softmax within each segment
    maxes = np.full(num_segments, -np.inf, dtype=logits.dtype)
    np.maximum.at(maxes, segments, logits)
    shifted = np.exp(logits - maxes[segments])
    sums = np.bincount(segments, weights=shifted, minlength=num_segments)
    np.divide(shifted, sums[segments], out=out, casting="unsafe")


def grouped_softmax_backward(out, alpha, grad_alpha, segments, num_segments):
    # out[k] = alpha[k] * (grad_alpha[k] - sum_{j in seg(k)} grad_alpha[j]*alpha[j])
    dots = np.bincount(segments, weights=alpha * grad_alpha, minlength=num_segments)
    np.multiply(alpha, grad_alpha - dots[segments].astype(alpha.dtype), out=out)
