"""Anderson acceleration for tensor fixed-point problems ``H(X) = X`` in Tucker format."""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .cross import C2DConfig, TensorOracle, c2d
from .tucker import TuckerTensor, frob_norm, multi_mode_product, rounded_sum


def aa_least_squares(terms: Sequence[TuckerTensor], target: TuckerTensor,
                     rcond: float = 1e-12) -> np.ndarray:
    """Coefficients ``g`` minimizing ``|sum_j g_j terms[j] - target|``.

    Works entirely with factors: per mode the stacked factors of the terms are
    factorized by a column-pivoted QR ``[U^1 ... U^s] = Q R P^T``; the problem then
    reduces to a small dense least squares problem in the coordinates of ``Q``.
    Rank-deficient systems get the minimal-norm solution (singular values below
    ``rcond * s_max`` are dropped).
    """
    terms = list(terms)
    if not terms:
        raise ValueError("need at least one term")
    d = target.ndim
    proj_target, blocks = [], []
    for mode in range(d):
        stacked = np.hstack([T.factors[mode] for T in terms])
        Q, R, piv = scipy.linalg.qr(stacked, mode="economic", pivoting=True)
        Z = np.empty_like(R)
        Z[:, piv] = R
        cuts = np.concatenate([[0], np.cumsum([T.ranks[mode] for T in terms])])
        blocks.append([Z[:, cuts[j]:cuts[j + 1]] for j in range(len(terms))])
        proj_target.append(Q.T @ target.factors[mode])
    b = multi_mode_product(target.core, proj_target).ravel(order="F")
    A = np.column_stack([
        multi_mode_product(T.core, [blocks[mode][j] for mode in range(d)]).ravel(order="F")
        for j, T in enumerate(terms)])
    return np.linalg.lstsq(A, b, rcond=rcond)[0]


class FixedPointMap:
    """A map ``X -> H(X)`` whose value is produced in Tucker form.

    Subclasses provide :meth:`oracle` (entries of ``H(X)`` for a given iterate) or
    override :meth:`apply` when ``H`` is not entrywise.
    """

    description = "fixed-point map"

    def __init__(self, shape: Sequence[int]):
        self.shape = tuple(shape)

    def oracle(self, X: TuckerTensor) -> TensorOracle:
        raise NotImplementedError

    def apply(self, X: TuckerTensor, tol: float, q: int = 4, iter_max: int = 50,
              r_max: int | None = None, rng=None):
        """``(H(X) compressed to tol, number of C2D sweeps)`` warm-started from ``X``."""
        cfg = C2DConfig(tol=tol, q=q, iter_max=iter_max, r_max=r_max)
        T, stats = c2d(self.oracle(X), X.factors, cfg, rng=rng)
        return T, stats.iterations


@dataclass
class AAParams:
    """Tucker-AA settings.

    ``theta=None`` keeps the C2D tolerance fixed at ``eps_h0``. The stopping tolerance
    is ``tol`` if given (``tol_rel`` is then cleared), otherwise ``tol_rel * rho_0``.
    """

    window: int = 4
    theta: float | None = 0.9
    tol: float | None = None
    tol_rel: float | None = 1e-7
    c2d_iter_max: int = 50
    q: int = 4
    r_max: int | None = None
    eps_f: float = 1e-12
    eps_h0: float = 1e-2
    max_iter: int = 1000
    eps_floor: float = 1e-14

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.theta is not None and not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        if self.tol is not None:
            self.tol_rel = None
        elif self.tol_rel is None:
            raise ValueError("give tol or tol_rel")
        if min(self.eps_f, self.eps_h0) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class AAHistory:
    rows: list = field(default_factory=list)
    converged: bool = False
    rho0: float = float("nan")
    tol: float = float("nan")

    def record(self, k, rho, ranks, c2d_iters, eps_h):
        self.rows.append(dict(k=k, rho=rho, rho_rel=rho / self.rho0, ranks=tuple(ranks),
                              c2d_iters=c2d_iters, eps_h=eps_h))

    @property
    def residuals(self):
        return [r["rho"] for r in self.rows]

    @property
    def ranks(self):
        return [r["ranks"] for r in self.rows]

    @property
    def c2d_iters(self):
        return [r["c2d_iters"] for r in self.rows]

    @property
    def iterations(self):
        return self.rows[-1]["k"] if self.rows else 0

    def write_csv(self, fh, d=None):
        d = d if d is not None else len(self.rows[0]["ranks"])
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "rho", "rho_rel"] + [f"rank{i + 1}" for i in range(d)]
                   + ["c2d_iters", "eps_h"])
        for r in self.rows:
            w.writerow([r["k"], repr(r["rho"]), repr(r["rho_rel"]), *r["ranks"],
                        r["c2d_iters"], repr(r["eps_h"])])


def tucker_aa(H: FixedPointMap, X0: TuckerTensor, p: AAParams, rng=None):
    """Solve ``H(X) = X`` by windowed Anderson acceleration on Tucker tensors.

    Returns ``(X, history)``. Each step compresses ``H(X_k)`` with warm-started C2D
    at the current tolerance ``eps_h``, measures ``rho_k = |H_k - X_k|``, combines the
    last ``min(window, k)`` evaluations with least-squares weights and rounds the
    result at ``eps_h``; afterwards ``eps_h = theta * rho_k``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    hist = AAHistory()
    eps_h = p.eps_h0

    def evaluate(X):
        return H.apply(X, eps_h, q=p.q, iter_max=p.c2d_iter_max, r_max=p.r_max, rng=rng)

    def residual(Hk, Xk):
        F = rounded_sum([(1.0, Hk), (-1.0, Xk)], p.eps_f, r_max=p.r_max)
        return F, frob_norm(F)

    H_prev, iters = evaluate(X0)
    F_prev, rho = residual(H_prev, X0)
    hist.rho0 = rho
    hist.tol = p.tol if p.tol is not None else p.tol_rel * rho
    hist.record(0, rho, X0.ranks, iters, eps_h)
    X = H_prev
    if rho < hist.tol:
        hist.converged = True
        return X, hist

    Hs = deque([H_prev], maxlen=p.window + 1)
    dFs = deque(maxlen=p.window)
    for k in range(1, p.max_iter + 1):
        Hk, iters = evaluate(X)
        Fk, rho = residual(Hk, X)
        Hs.append(Hk)
        dFs.append(rounded_sum([(1.0, Fk), (-1.0, F_prev)], p.eps_f, r_max=p.r_max))
        F_prev = Fk
        mk = min(p.window, k)
        gamma = aa_least_squares(list(dFs)[-mk:], Fk)
        window = list(Hs)[-(mk + 1):]
        # H_k - sum_i g_i (H_{i+1} - H_i), collected per stored evaluation
        coef = np.zeros(mk + 1)
        coef[-1] = 1.0
        coef[1:] -= gamma
        coef[:-1] += gamma
        X_next = rounded_sum(list(zip(coef, window)), eps_h, r_max=p.r_max)
        hist.record(k, rho, X.ranks, iters, eps_h)
        if p.theta is not None:
            eps_h = max(p.theta * rho, p.eps_floor)
        X = X_next
        if rho < hist.tol:
            hist.converged = True
            break
    return X, hist
