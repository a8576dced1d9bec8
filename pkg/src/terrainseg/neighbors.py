"""Exhaustive nearest-neighbour search with deterministic tie-breaking."""

import numpy as np

_CHUNK_BYTES = 1 << 25


def sq_distances(A, B) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``A`` and ``B``.

    Computed from explicit differences (not the Gram identity), so identical
    vectors give exactly zero.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    out = np.empty((A.shape[0], B.shape[0]))
    rows = max(1, _CHUNK_BYTES // (8 * max(1, B.shape[0] * max(1, A.shape[1]))))
    for s in range(0, A.shape[0], rows):
        diff = A[s : s + rows, None, :] - B[None, :, :]
        np.einsum("ijk,ijk->ij", diff, diff, out=out[s : s + rows])
    return out


def distances(A, B) -> np.ndarray:
    return np.sqrt(sq_distances(A, B))


def _select(d2_rows, k):
    """Indices of the k smallest entries per row, ordered by (distance, index)."""
    n, m = d2_rows.shape
    out = np.empty((n, k), dtype=np.int64)
    if k == m:
        return np.argsort(d2_rows, axis=1, kind="stable")
    part = np.partition(d2_rows, k - 1, axis=1)[:, k - 1 : k]
    for i in range(n):
        cand = np.flatnonzero(d2_rows[i] <= part[i, 0])
        order = np.argsort(d2_rows[i, cand], kind="stable")
        out[i] = cand[order[:k]]
    return out


def nearest(Q, X, k: int, exclude_self: bool = False):
    """k nearest rows of ``X`` for every row of ``Q``.

    Returns ``(indices, sq_dists)``, both ``(len(Q), k)``, sorted by distance
    with ties going to the lower training index.  With ``exclude_self`` the
    query ``i`` is assumed to be ``X[i]`` and is never its own neighbour.
    """
    Q = np.asarray(Q, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    n_x = X.shape[0]
    if k < 1 or k > n_x - (1 if exclude_self else 0):
        raise ValueError(f"k={k} out of range for {n_x} reference points")
    idx = np.empty((Q.shape[0], k), dtype=np.int64)
    d2 = np.empty((Q.shape[0], k))
    rows = max(1, _CHUNK_BYTES // (8 * max(1, n_x * max(1, X.shape[1]))))
    for s in range(0, Q.shape[0], rows):
        block = sq_distances(Q[s : s + rows], X)
        if exclude_self:
            r = np.arange(block.shape[0])
            block[r, s + r] = np.inf
        sel = _select(block, k)
        idx[s : s + rows] = sel
        d2[s : s + rows] = np.take_along_axis(block, sel, axis=1)
    return idx, d2
