"""Pure NumPy nearest-neighbour kernels (fallback for the compiled module)."""
import numpy as np

_CHUNK_BYTES = 64 * 2 ** 20


def kneighbors(query, ref, k, skip=None):
    """Indices of the ``k`` nearest rows of ``ref`` for each row of ``query``.

    Squared Euclidean distances are accumulated coordinate by coordinate from
    explicit differences (the same order as the compiled kernel, so both agree
    bitwise); ties go to the lower index. ``skip[i]``
    (or -1) names a ``ref`` row excluded for query ``i``.
    """
    query = np.ascontiguousarray(query, dtype=np.float64)
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    nq, n = query.shape[0], ref.shape[0]
    if skip is None:
        skip = np.full(nq, -1, dtype=np.int64)
    skip = np.asarray(skip, dtype=np.int64)
    available = n - (skip >= 0).astype(np.int64)
    if k < 1 or (nq and k > available.min()):
        raise ValueError(f"cannot take {k} neighbours from {n} reference points")
    out = np.empty((nq, k), dtype=np.int64)
    rows = max(1, _CHUNK_BYTES // max(1, 8 * n))
    order_key = np.arange(n)
    for start in range(0, nq, rows):
        stop = min(nq, start + rows)
        dist = np.zeros((stop - start, n))
        for t in range(query.shape[1]):
            diff = query[start:stop, t, None] - ref[None, :, t]
            dist += diff * diff
        for j, i in enumerate(range(start, stop)):
            d = dist[j]
            if skip[i] >= 0:
                d[skip[i]] = np.inf
            out[i] = np.lexsort((order_key, d))[:k]
    return out


def interpolate(base, partner, gaps):
    """Rows ``base + gaps * (partner - base)``."""
    base = np.asarray(base, dtype=np.float64)
    partner = np.asarray(partner, dtype=np.float64)
    gaps = np.asarray(gaps, dtype=np.float64)
    return base + gaps[:, None] * (partner - base)
