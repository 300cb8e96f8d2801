"""Fixed-order dense kernels and the multiply-accumulate counter.

Every product accumulates over the inner index strictly left to right, so
results are bit-identical to a naive triple loop and do not depend on how a
batch is split. The numba kernel is used when available; the numpy fallback
performs the same arithmetic in the same order.
"""
import threading
from contextlib import contextmanager

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba ships with the dev environment
    numba = None


if numba is not None:

    @numba.njit(cache=True, nogil=True)
    def _mm3(a, b, out):
        nb, m, kk = a.shape
        n = b.shape[2]
        for bb in range(nb):
            for i in range(m):
                for j in range(n):
                    out[bb, i, j] = a[bb, i, 0] * b[bb, 0, j]
                for k in range(1, kk):
                    aik = a[bb, i, k]
                    for j in range(n):
                        out[bb, i, j] += aik * b[bb, k, j]
        return out


def _mm3_numpy(a, b, out):
    out[...] = a[:, :, 0:1] * b[:, 0:1, :]
    tmp = np.empty_like(out)
    for k in range(1, a.shape[2]):
        np.multiply(a[:, :, k:k + 1], b[:, k:k + 1, :], out=tmp)
        out += tmp
    return out


class MacCounter:
    """Tallies multiply-accumulates issued through :func:`fixed_matmul`."""

    def __init__(self):
        self.total = 0
        self.by_tag = {}

    def add(self, n, tag):
        self.total += n
        self.by_tag[tag] = self.by_tag.get(tag, 0) + n


_local = threading.local()


def _counters():
    if not hasattr(_local, "counters"):
        _local.counters = []
        _local.tags = []
    return _local.counters


@contextmanager
def count_macs():
    """Count MACs of every matmul issued on this thread inside the block."""
    counter = MacCounter()
    stack = _counters()
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.remove(counter)


@contextmanager
def mac_tag(tag):
    """Attribute MACs issued inside the block to ``tag``."""
    _counters()
    _local.tags.append(tag)
    try:
        yield
    finally:
        _local.tags.pop()


def _record_macs(n):
    stack = _counters()
    if stack:
        tag = _local.tags[-1] if _local.tags else "untagged"
        for c in stack:
            c.add(n, tag)


def fixed_matmul(a, b, use_numba=True):
    """Batched product ``a @ b`` with fixed left-to-right accumulation.

    ``a`` is (..., M, K); ``b`` is (K, N) or (..., K, N) with batch dims equal
    to or broadcastable against those of ``a``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    m, k = a.shape[-2:]
    n = b.shape[-1]
    if b.ndim == 2:
        # shared right operand: fold batch dims into rows, identical arithmetic
        lead = a.shape[:-2]
        a3 = np.ascontiguousarray(a.reshape(1, -1, k))
        b3 = np.ascontiguousarray(b.reshape(1, k, n))
        out_shape = lead + (m, n)
    else:
        lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        a3 = np.ascontiguousarray(np.broadcast_to(a, lead + (m, k)).reshape(-1, m, k))
        b3 = np.ascontiguousarray(np.broadcast_to(b, lead + (k, n)).reshape(-1, k, n))
        out_shape = lead + (m, n)
    out = np.empty((a3.shape[0], a3.shape[1], n))
    if k == 0:
        raise ValueError("matmul with empty inner dimension")
    if use_numba and numba is not None:
        _mm3(a3, b3, out)
    else:
        _mm3_numpy(a3, b3, out)
    _record_macs(int(np.prod(out_shape, dtype=np.int64)) * k)
    return out.reshape(out_shape)
