"""Compare the compiled forward-backward kernel against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [N] [T] [S]
"""

import sys
import time

import numpy as np

from hmmchoice._kernels import _pure

try:
    from hmmchoice._kernels import _core
except ImportError:
    _core = None


def random_instance(rng, N, T, S):
    log_pi = np.log(rng.dirichlet(np.ones(S), size=N))
    log_A = np.log(rng.dirichlet(np.ones(S), size=(N, T - 1, S)))
    log_E = rng.normal(-1.0, 1.0, size=(N, T, S))
    lengths = np.full(N, T, dtype=np.int64)
    # make some panels short so the padding path is exercised
    lengths[: N // 10] = rng.integers(1, T + 1, size=N // 10)
    return log_pi, log_A, log_E, lengths


def time_backend(fn, args, repeats=7):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    N = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
    T = int(sys.argv[2]) if len(sys.argv) > 2 else 10
    S = int(sys.argv[3]) if len(sys.argv) > 3 else 4
    rng = np.random.default_rng(0)
    args = random_instance(rng, N, T, S)

    t_pure = time_backend(_pure.forward_backward, args)
    print(f"panel: N={N} T={T} S={S}")
    print(f"pure numpy : {t_pure * 1e3:8.2f} ms")
    if _core is None:
        print("compiled   : not built (pip install -e . to build it)")
        return
    out_p = _pure.forward_backward(*args)
    out_c = _core.forward_backward(*args)
    worst = max(
        np.max(np.abs(np.nan_to_num(a, neginf=-1e30) - np.nan_to_num(b, neginf=-1e30)))
        for a, b in zip(out_p, out_c)
    )
    t_core = time_backend(_core.forward_backward, args)
    print(f"compiled   : {t_core * 1e3:8.2f} ms   (speedup x{t_pure / t_core:.1f})")
    print(f"max |pure - compiled| over all outputs: {worst:.3e}")


if __name__ == "__main__":
    main()
