"""Cross2-DEIM: fiber-sampling cross approximation of Tucker tensors.

The target tensor is only accessed through a :class:`TensorOracle`. Each sweep
picks main index sets by QDEIM on the current factors, samples the small cross
tensor ``W = X[I_1, ..., I_d]``, chooses ``r_i`` complement tuples per mode by
QDEIM on the right singular vectors of ``W``'s unfoldings, samples the
corresponding fibers, and fits the core by least squares on an oversampled cross
tensor.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .indexing import gpode, increase, qdeim
from .tucker import (TuckerTensor, diff_norm, matricize, multi_mode_product, retruncate,
                     sample_entries, sample_fibers, sample_subtensor)


class TensorOracle:
    """Black-box access to the entries of a tensor of shape ``shape``.

    ``func(*index_arrays)`` must accept broadcastable 0-based integer arrays (one per
    mode) and return the matching entries. Subclasses may override the structured
    samplers ``_subtensor``/``_fibers``/``_entries`` instead. ``count`` tallies every
    entry handed out.
    """

    def __init__(self, shape: Sequence[int], func: Callable | None = None):
        self.shape = tuple(int(n) for n in shape)
        self._func = func
        self.count = 0
        self._lock = threading.Lock()

    @property
    def ndim(self):
        return len(self.shape)

    def _tally(self, k):
        with self._lock:
            self.count += int(k)

    def _evaluate(self, index_arrays):
        if self._func is None:
            raise NotImplementedError("oracle has no entry function")
        return np.asarray(self._func(*index_arrays), dtype=float)

    def _subtensor(self, sets):
        shape = tuple(len(s) for s in sets)
        return np.array(np.broadcast_to(self._evaluate(np.ix_(*sets)), shape))

    def _fibers(self, mode, idx):
        n, m = self.shape[mode], idx.shape[0]
        arrays = [np.arange(n)[:, None] if j == mode else idx[None, :, j]
                  for j in range(self.ndim)]
        return np.array(np.broadcast_to(self._evaluate(arrays), (n, m)))

    def _entries(self, idx):
        return np.array(np.broadcast_to(self._evaluate(tuple(idx.T)), (idx.shape[0],)))

    def subtensor(self, sets) -> np.ndarray:
        """Block ``X[I_1, ..., I_d]``."""
        sets = [np.asarray(s, dtype=np.intp) for s in sets]
        vals = self._subtensor(sets)
        self._tally(vals.size)
        return vals

    def fibers(self, mode: int, idx) -> np.ndarray:
        """``(n_mode, m)`` matrix of mode fibers through the rows of ``idx``."""
        idx = np.atleast_2d(np.asarray(idx, dtype=np.intp))
        vals = self._fibers(mode, idx)
        self._tally(vals.size)
        return vals

    def entries(self, idx) -> np.ndarray:
        idx = np.atleast_2d(np.asarray(idx, dtype=np.intp))
        vals = self._entries(idx)
        self._tally(vals.size)
        return vals

    def __call__(self, *idx) -> float:
        return float(self.entries(np.asarray(idx)[None, :])[0])


class TuckerOracle(TensorOracle):
    """Oracle reading entries off a (core, factors) pair."""

    def __init__(self, core, factors):
        factors = tuple(np.asarray(U, float) for U in factors)
        super().__init__([U.shape[0] for U in factors])
        self.core = np.asarray(core, float)
        self.factors = factors

    @classmethod
    def from_tucker(cls, T: TuckerTensor):
        return cls(T.core, T.factors)

    def _subtensor(self, sets):
        return sample_subtensor(self.core, self.factors, sets)

    def _fibers(self, mode, idx):
        return sample_fibers(self.core, self.factors, mode, idx)

    def _entries(self, idx):
        return sample_entries(self.core, self.factors, idx)


class EntrywiseOracle(TensorOracle):
    """Entrywise function of several Tucker-structured tensors.

    ``terms`` is a list of ``(core, factors)`` pairs of a common shape.
    ``combine(values, index_arrays)`` receives the list of sampled term values and
    the broadcastable index arrays of the sampled positions.
    """

    def __init__(self, terms, combine: Callable):
        terms = [(np.asarray(c, float), tuple(np.asarray(U, float) for U in f)) for c, f in terms]
        super().__init__([U.shape[0] for U in terms[0][1]])
        self.terms = terms
        self.combine = combine

    def _subtensor(self, sets):
        vals = [sample_subtensor(c, f, sets) for c, f in self.terms]
        return np.asarray(self.combine(vals, np.ix_(*sets)), float)

    def _fibers(self, mode, idx):
        vals = [sample_fibers(c, f, mode, idx) for c, f in self.terms]
        arrays = [np.arange(self.shape[mode])[:, None] if j == mode else idx[None, :, j]
                  for j in range(self.ndim)]
        return np.asarray(self.combine(vals, arrays), float)

    def _entries(self, idx):
        vals = [sample_entries(c, f, idx) for c, f in self.terms]
        return np.asarray(self.combine(vals, tuple(idx.T)), float)


# ---------------------------------------------------------------------------
# linear ordering of cross-tensor entries


def linear_order(k: Sequence[int], ranks: Sequence[int]) -> int:
    """Position of multi-index ``k`` when the first index varies fastest (0-based)."""
    k = tuple(int(x) for x in k)
    if len(k) != len(ranks) or any(not 0 <= a < r for a, r in zip(k, ranks)):
        raise ValueError(f"multi-index {k} out of range for {tuple(ranks)}")
    return int(np.ravel_multi_index(k, tuple(ranks), order="F"))


def unrank(j, ranks: Sequence[int]) -> tuple:
    """Inverse of :func:`linear_order`; accepts scalars or arrays."""
    return np.unravel_index(j, tuple(ranks), order="F")


def core_reshape(W: np.ndarray, mode: int) -> np.ndarray:
    """``r_mode x R_{!=mode}`` matrix whose columns follow :func:`linear_order`."""
    return matricize(W, mode)


def select_complement(W: np.ndarray, mode: int, main_sets, count: int | None = None) -> np.ndarray:
    """Complement tuples for fiber sampling in ``mode``.

    Returns an ``(m, d)`` array of global indices; column ``mode`` is left at zero and
    is meaningless. ``m`` defaults to ``W.shape[mode]`` and never exceeds the number
    of available columns.
    """
    d = W.ndim
    Wi = core_reshape(W, mode)
    m = Wi.shape[0] if count is None else count
    m = min(m, Wi.shape[1])
    Z = np.linalg.svd(Wi.T, full_matrices=False)[0][:, :m]
    cols = qdeim(Z)
    others = [j for j in range(d) if j != mode]
    local = unrank(cols, [W.shape[j] for j in others])
    out = np.zeros((m, d), dtype=np.intp)
    for pos, j in zip(local, others):
        out[:, j] = np.asarray(main_sets[j], dtype=np.intp)[pos]
    return out


def _pinv_rows(A):
    """Left inverse of a tall block ``A`` through QR; pseudo-inverse if degenerate."""
    m, r = A.shape
    if m >= r:
        Q, R = np.linalg.qr(A)
        diag = np.abs(np.diag(R))
        if diag.min() > 1e-13 * diag.max():
            return scipy.linalg.solve_triangular(R, Q.T)
    return np.linalg.pinv(A)


def _core_least_squares(W_os, factors, os_sets):
    return multi_mode_product(W_os, [_pinv_rows(U[s]) for U, s in zip(factors, os_sets)])


def _fiber_factors(oracle, W, main_sets):
    factors = []
    for mode in range(W.ndim):
        idx = select_complement(W, mode, main_sets)
        F = oracle.fibers(mode, idx)
        factors.append(np.linalg.svd(F, full_matrices=False)[0])
    return factors


def c2di(oracle: TensorOracle, U0: Sequence[np.ndarray], oversample: int = 3) -> TuckerTensor:
    """Single Cross2-DEIM sweep from factor guesses ``U0``; output ranks match ``U0``."""
    U0 = [np.asarray(U, float) for U in U0]
    if len(U0) != oracle.ndim:
        raise ValueError("need one factor guess per mode")
    main = [qdeim(U) for U in U0]
    os_sets = [gpode(U, min(U.shape[1] + oversample, U.shape[0])) for U in U0]
    W = oracle.subtensor(main)
    W_os = oracle.subtensor(os_sets)
    factors = _fiber_factors(oracle, W, main)
    core = _core_least_squares(W_os, factors, os_sets)
    return TuckerTensor(core, tuple(factors))


@dataclass
class C2DConfig:
    tol: float
    q: int = 4
    iter_max: int = 50
    oversample: int = 3
    r_max: int | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.q < 0 or self.iter_max < 1 or self.oversample < 0:
            raise ValueError("need q >= 0, iter_max >= 1, oversample >= 0")


@dataclass
class C2DStats:
    iterations: int = 0
    converged: bool = False
    ranks: list = field(default_factory=list)
    diffs: list = field(default_factory=list)
    sigma_min: list = field(default_factory=list)
    samples: int = 0
    final_ranks: tuple = ()

    @property
    def average_ranks(self):
        return [float(np.mean(r)) for r in self.ranks]

    @property
    def max_inflation(self):
        final = float(np.mean(self.final_ranks))
        return max(self.average_ranks) / final if self.ranks and final > 0 else float("nan")


def _min_singular_value(core, mode):
    M = matricize(core, mode)
    if M.shape[0] > M.shape[1]:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[-1])


def c2d(oracle: TensorOracle, U0: Sequence[np.ndarray], cfg: C2DConfig,
        rng: np.random.Generator | None = None) -> tuple[TuckerTensor, C2DStats]:
    """Rank-adaptive Cross2-DEIM.

    Index sets grow by up to ``cfg.q`` per sweep in every mode whose previous core
    unfolding still had its smallest singular value above ``cfg.tol``; the extra
    indices come from the previous main set and, failing that, at random from the
    unused indices. Iteration stops once both the change between consecutive iterates
    and all smallest core singular values drop below ``cfg.tol``; the final iterate is
    re-truncated at ``cfg.tol``. If ``cfg.iter_max`` sweeps pass without that, the
    last iterate is truncated and returned with ``converged=False``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    d = oracle.ndim
    U = [np.asarray(V, float) for V in U0]
    if len(U) != d:
        raise ValueError("need one factor guess per mode")
    cap = cfg.r_max if cfg.r_max is not None else max(oracle.shape)
    stats = C2DStats()
    start = oracle.count
    prev_sets = [np.zeros(0, dtype=np.intp)] * d
    saturated = [False] * d
    prev = None
    X = None
    for k in range(1, cfg.iter_max + 1):
        main = []
        for i in range(d):
            n_i = oracle.shape[i]
            grow = 0 if saturated[i] else cfg.q
            I = increase(qdeim(U[i]), prev_sets[i], n_i, grow, rng=rng)
            main.append(I[:min(cap, n_i)])
        W = oracle.subtensor(main)
        U = _fiber_factors(oracle, W, main)
        os_sets = [gpode(V, min(V.shape[1] + cfg.oversample, V.shape[0])) for V in U]
        core = _core_least_squares(oracle.subtensor(os_sets), U, os_sets)
        X = TuckerTensor(core, tuple(U))

        sig = [_min_singular_value(core, i) for i in range(d)]
        diff = np.inf if prev is None else diff_norm(X, prev)
        stats.iterations = k
        stats.ranks.append(X.ranks)
        stats.diffs.append(float(diff))
        stats.sigma_min.append(sig)
        if max(diff, max(sig)) < cfg.tol:
            stats.converged = True
            break
        saturated = [s < cfg.tol for s in sig]
        prev, prev_sets = X, main
    out = retruncate(X, cfg.tol, r_max=cfg.r_max)
    stats.final_ranks = out.ranks
    stats.samples = oracle.count - start
    return out, stats


def random_start(shape: Sequence[int], rng: np.random.Generator | None = None) -> list:
    """Cold-start factor guesses: one random unit vector per mode."""
    rng = np.random.default_rng() if rng is None else rng
    out = []
    for n in shape:
        v = rng.standard_normal((n, 1))
        out.append(v / np.linalg.norm(v))
    return out
