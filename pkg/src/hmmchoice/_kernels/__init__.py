"""Kernel backend selection.

The forward-backward recursion is the hot loop of every fit: it runs once
per person per likelihood evaluation, inside every EM iteration and every
quasi-Newton step.  A compiled extension (``_core``, Cython) is preferred
when it was built; the numpy implementation in ``_pure`` is the fallback
and the reference the extension is tested against.  Set ``HMMCHOICE_PURE=1``
to force the fallback.  ``benchmarks/bench_kernels.py`` compares the two.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _pure

if os.environ.get("HMMCHOICE_PURE"):
    _impl = _pure
    BACKEND = "pure"
else:
    try:
        from . import _core as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _pure
        BACKEND = "pure"


def forward_backward(log_pi, log_A, log_E, lengths, n_threads: int = 1):
    """Dispatch to the selected backend, optionally chunked across threads.

    Outputs are written into per-person slices, so results are identical
    for any thread count.
    """
    N = log_E.shape[0]
    if n_threads <= 1 or N < 2 * n_threads:
        return _impl.forward_backward(log_pi, log_A, log_E, lengths)

    bounds = np.linspace(0, N, n_threads + 1, dtype=int)
    chunks = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def run(span):
        a, b = span
        return _impl.forward_backward(log_pi[a:b], log_A[a:b], log_E[a:b], lengths[a:b])

    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(run, chunks))
    return tuple(np.concatenate([p[i] for p in parts], axis=0) for i in range(5))
