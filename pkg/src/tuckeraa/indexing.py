"""DEIM-family row selection for tall orthonormal matrices."""
from __future__ import annotations

import numpy as np
import scipy.linalg


def qdeim(U: np.ndarray) -> np.ndarray:
    """Rows picked by column-pivoted QR of ``U.T``.

    Returns the first ``r`` pivots (0-based) for an ``n x r`` matrix ``U``. LAPACK's
    pivoting takes the first column of maximal norm, so ties go to the lowest index.
    """
    U = np.asarray(U, dtype=float)
    n, r = U.shape
    if r > n:
        raise ValueError(f"cannot select {r} rows from {n}")
    if r == 0:
        return np.zeros(0, dtype=np.intp)
    _, R, piv = scipy.linalg.qr(U.T, mode="economic", pivoting=True)
    if abs(R[r - 1, r - 1]) <= 1e-14 * max(abs(R[0, 0]), 1e-300):
        raise np.linalg.LinAlgError("QDEIM input is numerically rank deficient")
    return np.asarray(piv[:r], dtype=np.intp)


def _sigma_min_after_adding(Up, U, chosen):
    """Smallest singular value of ``[Up; U[j]]`` for every candidate row ``j``."""
    A = Up.T @ Up
    G = A[None, :, :] + U[:, :, None] * U[:, None, :]
    ev = np.linalg.eigvalsh(G)[:, 0]
    ev[chosen] = -np.inf
    return ev


def gpode(U: np.ndarray, m: int) -> np.ndarray:
    """Oversampled selection of ``m >= r`` rows.

    The first ``r`` rows come from :func:`qdeim`; each further row is the one that
    maximizes the smallest singular value of the sampled block.
    """
    U = np.asarray(U, dtype=float)
    n, r = U.shape
    if m < r:
        raise ValueError(f"m={m} smaller than rank {r}")
    if m > n:
        raise ValueError(f"cannot select {m} rows from {n}")
    idx = list(qdeim(U))
    chosen = np.zeros(n, dtype=bool)
    chosen[idx] = True
    while len(idx) < m:
        score = _sigma_min_after_adding(U[idx], U, chosen)
        j = int(np.argmax(score))
        idx.append(j)
        chosen[j] = True
    return np.asarray(idx, dtype=np.intp)


def increase(I_star, I_prev, n: int, q: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Grow ``I_star`` by up to ``q`` indices not already in it.

    Candidates are drawn from ``I_prev`` in stored order. If ``rng`` is given and
    ``I_prev`` runs out, the remainder is drawn uniformly from the unused indices of
    ``range(n)``. The result never exceeds ``n`` entries.
    """
    out = [int(i) for i in I_star]
    seen = set(out)
    if q <= 0:
        return np.asarray(out, dtype=np.intp)
    added = 0
    for i in I_prev:
        if added == q:
            break
        i = int(i)
        if i not in seen:
            out.append(i)
            seen.add(i)
            added += 1
    if rng is not None and added < q:
        pool = np.setdiff1d(np.arange(n), np.fromiter(seen, dtype=np.intp, count=len(seen)))
        take = min(q - added, pool.size)
        if take:
            out.extend(int(i) for i in rng.choice(pool, size=take, replace=False))
    return np.asarray(out, dtype=np.intp)
