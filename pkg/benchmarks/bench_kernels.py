"""Compare the numba kernels with their pure-Python / numpy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--length N]

Each row times one kernel on identical inputs after a warm-up call (so JIT
compilation is excluded) and checks that both paths return the same result.
"""
import argparse
import time

import numpy as np

from hodep import _accel, _kernels, factor_graph
from hodep.admm_inference import ALL_PATTERNS, initial_u


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def admm_case(n, rng):
    g = factor_graph.build(n, rng.uniform(-2, 2, size=(n + 1, n)), include_backward=True)
    args = (np.ascontiguousarray(g.theta), np.ascontiguousarray(g.slave_arcs), g.delta_array,
            initial_u(g), 1.0, 1.0, 1e-4, 1e-4, 300, ALL_PATTERNS, False)

    def run(kernel):
        return lambda: kernel(*args, np.zeros((300, 4)))

    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timed repetitions, best kept (default 5)")
    ap.add_argument("--length", type=int, default=40, help="sentence length n (default 40)")
    args = ap.parse_args(argv)
    if not _accel.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    n = args.length
    rows = []

    run = admm_case(n, rng)
    a, b = run(_kernels.admm_loop)(), run(_kernels.admm_numpy)()
    assert np.allclose(a[1], b[1]), "ADMM paths disagree"
    rows.append(("admm (box, n=%d)" % n, best_of(run(_kernels.admm_loop), args.repeat),
                 best_of(run(_kernels.admm_numpy), args.repeat), "numpy"))

    w = rng.normal(size=(n + 1, n + 1))
    np.fill_diagonal(w, -np.inf)
    w[:, 0] = -np.inf
    assert np.array_equal(_kernels.chu_liu_edmonds(w), _kernels.chu_liu_edmonds.py_func(w))
    rows.append(("chu-liu/edmonds (n=%d)" % n, best_of(lambda: _kernels.chu_liu_edmonds(w), args.repeat),
                 best_of(lambda: _kernels.chu_liu_edmonds.py_func(w), args.repeat), "python"))

    v = 16
    unary = rng.normal(size=(v, 2))
    pairs = np.array([[i, i + 1] for i in range(v - 1)])
    plog = rng.normal(size=(v - 1, 2, 2))
    assert np.allclose(_kernels.enumerate_loop(unary, pairs, plog), _kernels.enumerate_numpy(unary, pairs, plog))
    rows.append(("enumeration (%d vars)" % v, best_of(lambda: _kernels.enumerate_loop(unary, pairs, plog), args.repeat),
                 best_of(lambda: _kernels.enumerate_numpy(unary, pairs, plog), args.repeat), "numpy"))

    d_in, h = 80, 64
    x = rng.normal(size=(n + 1, d_in))
    wl = rng.normal(scale=0.1, size=(4 * h, d_in + h))
    bl = np.zeros(4 * h)
    hs, cs, gates = _kernels.lstm_forward(x, wl, bl, False)
    assert np.allclose(hs, _kernels.lstm_forward.py_func(x, wl, bl, False)[0])
    rows.append(("lstm forward (n=%d, h=%d)" % (n, h),
                 best_of(lambda: _kernels.lstm_forward(x, wl, bl, False), args.repeat),
                 best_of(lambda: _kernels.lstm_forward.py_func(x, wl, bl, False), args.repeat), "python"))
    d_hs = rng.normal(size=hs.shape)
    rows.append(("lstm backward (n=%d, h=%d)" % (n, h),
                 best_of(lambda: _kernels.lstm_backward(x, wl, hs, cs, gates, d_hs, False), args.repeat),
                 best_of(lambda: _kernels.lstm_backward.py_func(x, wl, hs, cs, gates, d_hs, False), args.repeat),
                 "python"))

    print(f"{'kernel':<28} {'numba ms':>10} {'fallback ms':>12} {'speed-up':>9}  fallback")
    for name, fast, slow, kind in rows:
        print(f"{name:<28} {1e3 * fast:>10.3f} {1e3 * slow:>12.3f} {slow / fast:>8.1f}x  {kind}")


if __name__ == "__main__":
    main()
