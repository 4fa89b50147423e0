"""Tucker tensors and the linear low-rank algebra built on them.

Dense tensors are plain ``numpy`` arrays. Matricization uses the Kolda
column ordering: the row index is the chosen mode and the remaining modes are
laid out lexicographically with the lowest remaining mode varying fastest.
All indices are 0-based.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

ORTHO_TOL = 1e-10


def matricize(X: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding of ``X`` as an ``n_mode x prod(others)`` matrix."""
    X = np.asarray(X)
    if not 0 <= mode < X.ndim:
        raise ValueError(f"mode {mode} out of range for a {X.ndim}-way tensor")
    return np.reshape(np.moveaxis(X, mode, 0), (X.shape[mode], -1), order="F")


def fold(M: np.ndarray, mode: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`matricize`."""
    shape = tuple(int(s) for s in shape)
    if not 0 <= mode < len(shape):
        raise ValueError(f"mode {mode} out of range for a {len(shape)}-way tensor")
    moved = (shape[mode],) + shape[:mode] + shape[mode + 1:]
    return np.moveaxis(np.reshape(M, moved, order="F"), 0, mode)


def _dense_mode_product(X, M, mode):
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[1] != X.shape[mode]:
        raise ValueError(
            f"matrix of shape {M.shape} does not match extent {X.shape[mode]} of mode {mode}")
    return np.moveaxis(np.tensordot(M, X, axes=(1, mode)), 0, mode)


def multi_mode_product(X: np.ndarray, mats: Sequence[np.ndarray | None]) -> np.ndarray:
    """Apply ``X x_1 mats[0] x_2 mats[1] ...``; ``None`` entries are skipped."""
    for mode, M in enumerate(mats):
        if M is not None:
            X = _dense_mode_product(X, M, mode)
    return X


def cheb_norm(X: np.ndarray) -> float:
    """Entrywise maximum absolute value."""
    return float(np.max(np.abs(X)))


def _check_orthonormal(U, tol=ORTHO_TOL):
    r = U.shape[1]
    err = np.linalg.norm(U.T @ U - np.eye(r))
    if err > tol:
        raise ValueError(f"factor columns are not orthonormal (|U^T U - I| = {err:.2e})")


@dataclass(frozen=True, eq=False)
class TuckerTensor:
    """``core x_1 U_1 x_2 ... x_d U_d`` with orthonormal factor columns."""

    core: np.ndarray
    factors: tuple

    def __post_init__(self):
        core = np.asarray(self.core, dtype=float)
        factors = tuple(np.asarray(U, dtype=float) for U in self.factors)
        if core.ndim != len(factors) or core.ndim < 1:
            raise ValueError("core order must equal the number of factors (>= 1)")
        for i, U in enumerate(factors):
            if U.ndim != 2 or U.shape[1] != core.shape[i]:
                raise ValueError(f"factor {i} has shape {U.shape}, core rank is {core.shape[i]}")
            if U.shape[1] > U.shape[0]:
                raise ValueError(f"rank {U.shape[1]} exceeds extent {U.shape[0]} in mode {i}")
            _check_orthonormal(U)
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "factors", factors)

    @property
    def ndim(self) -> int:
        return self.core.ndim

    @property
    def shape(self) -> tuple:
        return tuple(U.shape[0] for U in self.factors)

    @property
    def ranks(self) -> tuple:
        return self.core.shape

    def full(self) -> np.ndarray:
        return multi_mode_product(self.core, self.factors)

    def norm(self) -> float:
        return frob_norm(self)

    def entries(self, idx) -> np.ndarray:
        return sample_entries(self.core, self.factors, idx)

    def subtensor(self, sets) -> np.ndarray:
        return sample_subtensor(self.core, self.factors, sets)

    def fibers(self, mode, idx) -> np.ndarray:
        return sample_fibers(self.core, self.factors, mode, idx)

    def __repr__(self):
        return f"TuckerTensor(shape={self.shape}, ranks={self.ranks})"


def zeros(shape: Sequence[int]) -> TuckerTensor:
    """Zero tensor stored with rank one in every mode."""
    factors = []
    for n in shape:
        U = np.zeros((n, 1))
        U[0, 0] = 1.0
        factors.append(U)
    return TuckerTensor(np.zeros((1,) * len(shape)), tuple(factors))


def rank_one(vectors: Sequence[np.ndarray], scale: float = 1.0) -> TuckerTensor:
    """``scale * v_1 o v_2 o ... o v_d`` with normalized factors."""
    norms = [np.linalg.norm(v) for v in vectors]
    if min(norms) == 0.0:
        return zeros([len(v) for v in vectors])
    factors = tuple(np.asarray(v, float).reshape(-1, 1) / s for v, s in zip(vectors, norms))
    core = np.full((1,) * len(vectors), scale * float(np.prod(norms)))
    return TuckerTensor(core, factors)


def from_factors(core: np.ndarray, factors: Sequence[np.ndarray]) -> TuckerTensor:
    """Build a TuckerTensor from arbitrary (not necessarily orthonormal) factors.

    Each factor is QR-orthonormalized and its triangular part pushed into the core.
    """
    qs, rs = [], []
    for U in factors:
        Q, R = np.linalg.qr(np.asarray(U, float))
        qs.append(Q)
        rs.append(R)
    return TuckerTensor(multi_mode_product(np.asarray(core, float), rs), tuple(qs))


def mode_product(X, M: np.ndarray, mode: int):
    """``X x_mode M`` for a dense array or a TuckerTensor.

    For a TuckerTensor the product is taken into factor ``mode``; the new factor is
    re-orthonormalized and the triangular remainder absorbed into the core.
    """
    if isinstance(X, TuckerTensor):
        if not 0 <= mode < X.ndim:
            raise ValueError(f"mode {mode} out of range")
        M = np.asarray(M, float)
        if M.ndim != 2 or M.shape[1] != X.shape[mode]:
            raise ValueError(f"matrix of shape {M.shape} does not match extent {X.shape[mode]}")
        Q, R = np.linalg.qr(M @ X.factors[mode])
        factors = list(X.factors)
        factors[mode] = Q
        return TuckerTensor(_dense_mode_product(X.core, R, mode), tuple(factors))
    X = np.asarray(X)
    if not 0 <= mode < X.ndim:
        raise ValueError(f"mode {mode} out of range")
    return _dense_mode_product(X, M, mode)


def frob_norm(T) -> float:
    """Frobenius norm; for a TuckerTensor this is the norm of its core."""
    if isinstance(T, TuckerTensor):
        return float(np.linalg.norm(T.core))
    return float(np.linalg.norm(np.ravel(T)))


# ---------------------------------------------------------------------------
# structured sampling of (core, factors) pairs; factors need not be orthonormal


def _batched_contract(core, rows, keep=None):
    """Contract ``core`` against per-sample factor rows.

    ``rows[j]`` is a ``(B, r_j)`` array for each ``j != keep``. Returns ``(B,)`` if
    ``keep`` is None, otherwise ``(B, r_keep)``.
    """
    d = core.ndim
    order = [j for j in range(d) if j != keep]
    T = core if keep is None else np.moveaxis(core, keep, -1)
    B = rows[order[0]].shape[0]
    A = rows[order[0]] @ T.reshape(T.shape[0], -1)
    rest = T.shape[1:]
    for j in order[1:]:
        A = A.reshape(B, rest[0], -1)
        A = np.matmul(rows[j][:, None, :], A)[:, 0, :]
        rest = rest[1:]
    return A.reshape((B,) + tuple(rest))


def sample_entries(core, factors, idx) -> np.ndarray:
    """Entries at the rows of the ``(N, d)`` integer array ``idx``."""
    idx = np.atleast_2d(np.asarray(idx, dtype=np.intp))
    d = len(factors)
    if idx.shape[1] != d:
        raise ValueError(f"expected {d} index columns, got {idx.shape[1]}")
    for j, U in enumerate(factors):
        if idx.size and (idx[:, j].min() < 0 or idx[:, j].max() >= U.shape[0]):
            raise IndexError(f"index out of range in mode {j}")
    if idx.shape[0] == 0:
        return np.zeros(0)
    rows = [U[idx[:, j]] for j, U in enumerate(factors)]
    return _batched_contract(np.asarray(core), rows)


def eval_entry(T: TuckerTensor, idx: Sequence[int]) -> float:
    """Single entry ``T[idx]``."""
    return float(sample_entries(T.core, T.factors, np.asarray(idx)[None, :])[0])


def sample_subtensor(core, factors, sets) -> np.ndarray:
    """Dense block ``T[I_1, ..., I_d]`` on a Cartesian product of index sets."""
    return multi_mode_product(np.asarray(core), [U[np.asarray(s, dtype=np.intp)]
                                                 for U, s in zip(factors, sets)])


def sample_fibers(core, factors, mode, idx) -> np.ndarray:
    """Mode-``mode`` fibers through the rows of ``idx`` (an ``(m, d)`` array).

    Column ``k`` of the result is ``T[idx[k, 0], ..., :, ..., idx[k, d-1]]``; the
    entries of column ``mode`` of ``idx`` are ignored.
    """
    idx = np.atleast_2d(np.asarray(idx, dtype=np.intp))
    rows = [None if j == mode else U[idx[:, j]] for j, U in enumerate(factors)]
    if len(factors) == 1:
        C = np.broadcast_to(np.asarray(core), (idx.shape[0], core.shape[0]))
    else:
        C = _batched_contract(np.asarray(core), rows, keep=mode)
    return factors[mode] @ C.T


# ---------------------------------------------------------------------------
# truncation


def truncation_rank(s: np.ndarray, threshold: float) -> int:
    """Smallest ``r`` with ``sqrt(sum(s[r:]**2)) <= threshold``."""
    tail = np.sqrt(np.cumsum((s ** 2)[::-1]))[::-1]
    # tail[r] is the discarded energy when keeping r values
    keep = np.nonzero(tail > threshold)[0]
    return 0 if keep.size == 0 else int(keep[-1]) + 1


def _mode_svds(X):
    out = []
    for mode in range(X.ndim):
        U, s, _ = np.linalg.svd(matricize(X, mode), full_matrices=False)
        out.append((U, s))
    return out


def hosvd(X: np.ndarray, tol: float | None = None, ranks: Sequence[int] | None = None,
          r_max: int | Sequence[int] | None = None) -> TuckerTensor:
    """Truncated higher-order SVD of a dense tensor.

    With ``tol`` each mode discards singular values whose tail energy stays below
    ``tol / sqrt(d)``, which guarantees ``|X - T| <= tol``. With ``ranks`` the
    leading ``ranks[i]`` singular vectors are kept. ``r_max`` caps the result.
    """
    X = np.asarray(X, dtype=float)
    d = X.ndim
    if (tol is None) == (ranks is None):
        raise ValueError("give exactly one of tol or ranks")
    if ranks is not None:
        ranks = tuple(int(r) for r in ranks)
        if len(ranks) != d or any(not 1 <= r <= n for r, n in zip(ranks, X.shape)):
            raise ValueError(f"ranks {ranks} invalid for shape {X.shape}")
    elif tol < 0:
        raise ValueError("tol must be non-negative")
    caps = _caps(r_max, d)
    factors = []
    for mode, (U, s) in enumerate(_mode_svds(X)):
        r = ranks[mode] if ranks is not None else truncation_rank(s, tol / np.sqrt(d))
        r = min(r, caps[mode], U.shape[1])
        if r == 0:
            return zeros(X.shape)
        factors.append(U[:, :r])
    core = multi_mode_product(X, [U.T for U in factors])
    return TuckerTensor(core, tuple(factors))


def _caps(r_max, d):
    if r_max is None:
        return [np.iinfo(np.int64).max] * d
    if np.isscalar(r_max):
        return [int(r_max)] * d
    return [int(r) for r in r_max]


def retruncate(T: TuckerTensor, tol: float, r_max=None) -> TuckerTensor:
    """Re-compress ``T`` by an HOSVD of its core with absolute tolerance ``tol``."""
    C = hosvd(T.core, tol=tol, r_max=r_max)
    if not np.any(C.core):
        return zeros(T.shape)
    factors = tuple(U @ V for U, V in zip(T.factors, C.factors))
    return TuckerTensor(C.core, factors)


def rounded_sum(terms: Iterable[tuple[float, TuckerTensor]], tol: float,
                r_max=None) -> TuckerTensor:
    """Truncated linear combination ``sum coef * T`` of Tucker tensors.

    Factors are concatenated per mode and orthonormalized by QR; the stacked core is
    then compressed with :func:`retruncate` (tolerance first, then the ``r_max`` cap).
    """
    terms = [(float(c), T) for c, T in terms]
    if not terms:
        raise ValueError("rounded_sum needs at least one term")
    shape = terms[0][1].shape
    if any(T.shape != shape for _, T in terms):
        raise ValueError("all terms must share the same shape")
    d = len(shape)
    qs, rs = [], []
    for mode in range(d):
        Q, R = np.linalg.qr(np.hstack([T.factors[mode] for _, T in terms]))
        qs.append(Q)
        rs.append(R)
    core = np.zeros(tuple(Q.shape[1] for Q in qs))
    offsets = np.zeros(d, dtype=int)
    for c, T in terms:
        blocks = [R[:, o:o + r] for R, o, r in zip(rs, offsets, T.ranks)]
        core += c * multi_mode_product(T.core, blocks)
        offsets += T.ranks
    return retruncate(TuckerTensor(core, tuple(qs)), tol, r_max=r_max)


def diff_norm(A: TuckerTensor, B: TuckerTensor, tol: float = 1e-14) -> float:
    """``|A - B|`` via a tightly rounded difference."""
    return frob_norm(rounded_sum([(1.0, A), (-1.0, B)], tol))


# ---------------------------------------------------------------------------
# binary format: int64 header (d, dims, ranks) then core and factors as float64,
# everything little-endian and column-major


def save_tucker(T: TuckerTensor, path) -> None:
    d = T.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(f"<{1 + 2 * d}q", d, *T.shape, *T.ranks))
        fh.write(np.asarray(T.core, dtype="<f8").ravel(order="F").tobytes())
        for U in T.factors:
            fh.write(np.asarray(U, dtype="<f8").ravel(order="F").tobytes())


def load_tucker(path) -> TuckerTensor:
    with open(path, "rb") as fh:
        buf = fh.read()
    (d,) = struct.unpack_from("<q", buf, 0)
    head = struct.unpack_from(f"<{2 * d}q", buf, 8)
    dims, ranks = head[:d], head[d:]
    pos = 8 * (1 + 2 * d)
    size = int(np.prod(ranks))
    core = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(ranks, order="F")
    pos += 8 * size
    factors = []
    for n, r in zip(dims, ranks):
        factors.append(np.frombuffer(buf, dtype="<f8", count=n * r, offset=pos)
                       .reshape((n, r), order="F").astype(float))
        pos += 8 * n * r
    if pos != len(buf):
        raise ValueError(f"trailing or missing bytes in {path}")
    return TuckerTensor(core.astype(float), tuple(factors))
