"""Time the hot kernels on both backends and report the speedup.

Shapes default to a training-sized workload: one embedding row per edge of a
mid-sized interaction graph. Run from the repo root:

    python3 benchmarks/bench_kernels.py --rows 200000 --dim 64
"""

import argparse
import time

import numpy as np

from kdar import kernels


def build_workload(rows, dim, segments, dtype, seed):
    rng = np.random.default_rng(seed)
    data = {
        "rows": rng.normal(size=(rows, dim)).astype(dtype),
        "weights": rng.random(rows).astype(dtype) + 0.1,
        "segments": np.sort(rng.integers(0, segments, size=rows)),
        "logits": (3.0 * rng.normal(size=rows)).astype(dtype),
        "grad_out": rng.normal(size=(segments, dim)).astype(dtype),
        "grad_alpha": rng.normal(size=rows).astype(dtype),
        "num_segments": segments,
    }
    data["alpha"] = kernels.grouped_softmax(
        data["logits"], data["segments"], segments)
    return data


def op_calls(d):
    n = d["num_segments"]
    return [
        ("scatter_add_rows", lambda impl: kernels.scatter_add_rows(
            np.zeros_like(d["grad_out"]), d["segments"], d["rows"], impl=impl)),
        ("segment_weighted_sum", lambda impl: kernels.segment_weighted_sum(
            d["rows"], d["weights"], d["segments"], n, impl=impl)),
        ("segment_gather_scale", lambda impl: kernels.segment_gather_scale(
            d["grad_out"], d["weights"], d["segments"], impl=impl)),
        ("segment_dot_rows", lambda impl: kernels.segment_dot_rows(
            d["grad_out"], d["rows"], d["segments"], impl=impl)),
        ("grouped_softmax", lambda impl: kernels.grouped_softmax(
            d["logits"], d["segments"], n, impl=impl)),
        ("grouped_softmax_backward", lambda impl: kernels.grouped_softmax_backward(
            d["alpha"], d["grad_alpha"], d["segments"], n, impl=impl)),
    ]


def best_time(fn, impl, repeats):
    fn(impl)  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(impl)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=200000, help="edge count")
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--segments", type=int, default=20000)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (package default: {kernels.BACKEND})")
    print(f"workload: {args.rows} rows x dim {args.dim}, "
          f"{args.segments} segments, {args.dtype}")

    data = build_workload(args.rows, args.dim, args.segments,
                          np.dtype(args.dtype), args.seed)
    names = sorted(backends)
    header = ["op"] + [f"{n} ms" for n in names]
    if len(names) == 2:
        header.append("speedup")
    rows_out = [header]
    for op_name, fn in op_calls(data):
        times = {n: best_time(fn, backends[n], args.repeats) for n in names}
        row = [op_name] + [f"{times[n] * 1e3:9.3f}" for n in names]
        if len(names) == 2:
            row.append(f"{times['numpy'] / times['cython']:6.2f}x")
        rows_out.append(row)
        # cross-check while we are here; a fast wrong kernel is worthless
        if len(names) == 2:
            ref = fn(backends["numpy"])
            got = fn(backends["cython"])
            tol = 2e-5 if data["rows"].dtype == np.float32 else 1e-12
            err = np.max(np.abs(np.asarray(ref) - np.asarray(got)))
            if err > tol:
                raise SystemExit(f"{op_name}: backends disagree by {err:.2e}")

    widths = [max(len(r[c]) for r in rows_out) for c in range(len(header))]
    for r in rows_out:
        print("  ".join(r[c].rjust(widths[c]) for c in range(len(r))))


if __name__ == "__main__":
    main()
