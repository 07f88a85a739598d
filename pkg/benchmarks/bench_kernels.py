"""Timing harness: compiled kernels vs the pure-Python fallback.

Both kernel modules are importable side by side no matter which one the
package selected at import, so the micro benchmarks run in one process.
The pipeline benchmark swaps the package-level bindings and rebuilds the
flow graph for the same bundle, which is what MSGFLOW_PURE=1 would do
for a whole run.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --flows 80000 --repeat 5
"""

from __future__ import annotations

import argparse
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from msgflow import _kernels
from msgflow._kernels import _pykernels
from msgflow.flowgraph import build_flow_graph
from msgflow.ingest import load_bundle
from msgflow.testutil import write_chain_bundle

try:
    from msgflow._kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None

NO_END = np.iinfo(np.int64).max


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def _innermost_inputs(groups: int, rounds: int):
    """One callback plus one inner and one stray publish per round."""
    per = rounds // groups
    starts = (np.arange(per, dtype=np.int64) * 1000)[None, :] + np.arange(
        groups, dtype=np.int64
    )[:, None] * 10**9
    starts = starts.ravel()
    n_cb = starts.size

    ev_time = np.concatenate([starts, starts + 50, starts + 500])
    ev_kind = np.concatenate(
        [np.zeros(n_cb, np.uint8), np.ones(2 * n_cb, np.uint8)]
    )
    group_col = np.repeat(np.arange(groups, dtype=np.int64), per)
    ev_group = np.concatenate([group_col] * 3)
    ev_index = np.concatenate(
        [np.arange(n_cb, dtype=np.int64), np.arange(2 * n_cb, dtype=np.int64)]
    )
    cb_end = starts + 100

    n = ev_time.size
    order = np.lexsort((np.arange(n), ev_kind, ev_time, ev_group))
    args = (
        np.ascontiguousarray(ev_kind[order]),
        np.ascontiguousarray(ev_group[order]),
        np.ascontiguousarray(ev_time[order]),
        np.ascontiguousarray(ev_index[order]),
        cb_end,
    )
    return args, 2 * n_cb


def _reachable_inputs(layers: int, width: int):
    """Layered DAG where every node feeds two nodes of the next layer."""
    rng = np.random.default_rng(7)
    n = layers * width
    rows = []
    for layer in range(layers - 1):
        base = layer * width
        for i in range(width):
            rows.append((base + i, base + width + rng.integers(width)))
            rows.append((base + i, base + width + rng.integers(width)))
    rows.sort()
    indptr = np.zeros(n + 1, dtype=np.int64)
    indices = np.empty(len(rows), dtype=np.int64)
    for j, (src, dst) in enumerate(rows):
        indptr[src + 1] += 1
        indices[j] = dst
    np.cumsum(indptr, out=indptr)
    return n, indptr, indices


@contextmanager
def _bound_to(impl):
    saved = (_kernels.innermost_enclosing, _kernels.reachable_mask)
    _kernels.innermost_enclosing = impl.innermost_enclosing
    _kernels.reachable_mask = impl.reachable_mask
    try:
        yield
    finally:
        _kernels.innermost_enclosing, _kernels.reachable_mask = saved


def _report(name: str, pure_s: float, compiled_s: float | None) -> None:
    if compiled_s is None:
        print(f"{name:<28} pure {pure_s * 1e3:9.2f} ms   compiled (not built)")
    else:
        print(
            f"{name:<28} pure {pure_s * 1e3:9.2f} ms   "
            f"compiled {compiled_s * 1e3:9.2f} ms   x{pure_s / compiled_s:.1f}"
        )


def bench_innermost(rounds: int, repeat: int) -> None:
    args, n_pub = _innermost_inputs(groups=64, rounds=rounds)

    def run(impl):
        out = np.full(n_pub, -1, dtype=np.int64)
        impl.innermost_enclosing(*args, out)
        return out

    pure_s = _time(lambda: run(_pykernels), repeat)
    compiled_s = None
    if _ckernels is not None:
        compiled_s = _time(lambda: run(_ckernels), repeat)
        if not np.array_equal(run(_pykernels), run(_ckernels)):
            raise SystemExit("innermost_enclosing: implementations disagree")
    _report(f"innermost ({args[0].size} events)", pure_s, compiled_s)


def bench_reachable(repeat: int) -> None:
    n, indptr, indices = _reachable_inputs(layers=400, width=250)

    def run(impl):
        out = np.zeros(n, dtype=np.uint8)
        impl.reachable_mask(indptr, indices, 0, out)
        return out

    pure_s = _time(lambda: run(_pykernels), repeat)
    compiled_s = None
    if _ckernels is not None:
        compiled_s = _time(lambda: run(_ckernels), repeat)
        if not np.array_equal(run(_pykernels), run(_ckernels)):
            raise SystemExit("reachable_mask: implementations disagree")
    _report(f"reachable ({n} nodes)", pure_s, compiled_s)


def bench_pipeline(flows: int, repeat: int) -> None:
    with tempfile.TemporaryDirectory() as tmp:
        bundle = Path(tmp) / "bench"
        write_chain_bundle(bundle, flows=flows)
        start = time.perf_counter()
        logd = load_bundle(bundle)
        load_s = time.perf_counter() - start
        print(f"load_bundle ({len(logd.events)} events): {load_s:.2f} s")

        with _bound_to(_pykernels):
            pure_s = _time(lambda: build_flow_graph(logd), repeat)
        compiled_s = None
        if _ckernels is not None:
            with _bound_to(_ckernels):
                compiled_s = _time(lambda: build_flow_graph(logd), repeat)
        _report("build_flow_graph", pure_s, compiled_s)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--flows", type=int, default=23_000, help="pipeline flows (13 events each)")
    parser.add_argument("--repeat", type=int, default=3, help="best-of repetitions")
    args = parser.parse_args()

    print(f"kernel selection at import: {_kernels.IMPLEMENTATION}")
    bench_innermost(rounds=200_000, repeat=args.repeat)
    bench_reachable(repeat=args.repeat)
    bench_pipeline(flows=args.flows, repeat=args.repeat)


if __name__ == "__main__":
    main()
