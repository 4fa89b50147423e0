"""Fast spectral Poisson / shifted-Poisson solver in Tucker format.

The 1-D second-difference matrix ``T_n`` is diagonalized by the sine transform
(homogeneous Dirichlet, vertex grid) or by the DCT-II (homogeneous Neumann, cell
grid). Transforming the right-hand side factors puts the operator in diagonal
form; the quotient tensor is then compressed with one C2D call and the
resulting factors are transformed back.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft
from scipy.interpolate import make_interp_spline

from .cross import C2DConfig, C2DStats, EntrywiseOracle, c2d
from .tucker import TuckerTensor, from_factors

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


def dst1(V: np.ndarray) -> np.ndarray:
    """Unnormalized type-I sine transform of each column of ``V``.

    ``y[k] = sum_j V[j] sin(pi (j+1)(k+1) / (n+1))``, computed from an odd extension of
    length ``2(n+1)`` and a real FFT.
    """
    V = np.asarray(V, dtype=float)
    squeeze = V.ndim == 1
    if squeeze:
        V = V[:, None]
    n, m = V.shape
    ext = np.zeros((2 * (n + 1), m))
    ext[1:n + 1] = V
    ext[n + 2:] = -V[::-1]
    out = -0.5 * np.fft.rfft(ext, axis=0)[1:n + 1].imag
    return out[:, 0] if squeeze else out


def sine_matrix(n: int) -> np.ndarray:
    """Dense orthogonal eigenvector matrix of ``T_n`` (for checks)."""
    j = np.arange(1, n + 1)
    return np.sqrt(2.0 / (n + 1)) * np.sin(np.pi * np.outer(j, j) / (n + 1))


def second_difference(n: int, kind: str = DIRICHLET) -> np.ndarray:
    """Dense ``T_n``: tridiag(-1, 2, -1), with reflected ends for Neumann."""
    T = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    if kind == NEUMANN:
        T[0, 0] = T[-1, -1] = 1.0
    return T


@dataclass(frozen=True)
class Laplace1DSpectrum:
    """Eigen-decomposition ``T_n = Z diag(lam) Z^T`` on one axis."""

    n: int
    h: float
    kind: str = DIRICHLET

    def __post_init__(self):
        if self.kind not in (DIRICHLET, NEUMANN):
            raise ValueError(f"unknown boundary kind {self.kind!r}")

    @property
    def eigenvalues(self) -> np.ndarray:
        n = self.n
        if self.kind == DIRICHLET:
            return 2.0 * (1.0 - np.cos(np.pi * np.arange(1, n + 1) / (n + 1)))
        return 2.0 * (1.0 - np.cos(np.pi * np.arange(n) / n))

    def forward(self, U: np.ndarray) -> np.ndarray:
        """``Z^T U`` column-wise."""
        if self.kind == DIRICHLET:
            return np.sqrt(2.0 / (self.n + 1)) * dst1(U)
        return scipy.fft.dct(np.asarray(U, float), type=2, norm="ortho", axis=0)

    def inverse(self, U: np.ndarray) -> np.ndarray:
        """``Z U`` column-wise."""
        if self.kind == DIRICHLET:
            return np.sqrt(2.0 / (self.n + 1)) * dst1(U)
        return scipy.fft.idct(np.asarray(U, float), type=2, norm="ortho", axis=0)


@dataclass
class PoissonProblem:
    """``Lap_h v = f`` (``shift`` None) or ``(I - shift Lap_h) v = f`` on ``n^d`` points."""

    rhs: TuckerTensor
    h: float
    kind: str = DIRICHLET
    shift: float | None = None

    def __post_init__(self):
        shape = self.rhs.shape
        if len(set(shape)) != 1:
            raise ValueError(f"rhs must have equal extents, got {shape}")

    @property
    def n(self):
        return self.rhs.shape[0]

    @property
    def d(self):
        return self.rhs.ndim

    @property
    def spectrum(self):
        return Laplace1DSpectrum(self.n, self.h, self.kind)


def _symbol(problem: PoissonProblem):
    """Divisor of the transformed rhs on an index grid, and the zero-mode mask."""
    lam = problem.spectrum.eigenvalues
    h2 = problem.h ** 2

    def divisor(index_arrays):
        total = sum(lam[i] for i in index_arrays)
        if problem.shift is None:
            return -total / h2
        return 1.0 + problem.shift * total / h2

    return divisor


def transformed_rhs(problem: PoissonProblem) -> TuckerTensor:
    spectrum = problem.spectrum
    F = problem.rhs
    return TuckerTensor(F.core, tuple(spectrum.forward(U) for U in F.factors))


def poisson_solve(problem: PoissonProblem, tol: float, warm=None, q: int = 4,
                  iter_max: int = 50, r_max: int | None = None,
                  rng: np.random.Generator | None = None) -> tuple[TuckerTensor, C2DStats]:
    """Solve in Tucker format to C2D tolerance ``tol`` (measured in the spectral domain).

    ``warm`` holds physical-space factor guesses; by default the transformed rhs
    factors are used.
    """
    spectrum = problem.spectrum
    Fhat = transformed_rhs(problem)
    divisor = _symbol(problem)

    if problem.kind == NEUMANN and problem.shift is None:
        zero_mode = float(Fhat.subtensor([[0]] * problem.d).ravel()[0])
        if abs(zero_mode) > 1e-12:
            raise ValueError("pure Neumann problem needs a mean-free right-hand side")

    def combine(vals, index_arrays):
        den = divisor(index_arrays)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = vals[0] / den
        return np.where(den == 0.0, 0.0, out)

    oracle = EntrywiseOracle([(Fhat.core, Fhat.factors)], combine)
    if warm is None:
        U0 = list(Fhat.factors)
    else:
        U0 = [np.linalg.qr(spectrum.forward(U))[0] for U in warm]
    cfg = C2DConfig(tol=tol, q=q, iter_max=iter_max, r_max=r_max)
    Vhat, stats = c2d(oracle, U0, cfg, rng=rng)
    # Z is orthogonal, so re-orthonormalizing only cleans up rounding
    return from_factors(Vhat.core, [spectrum.inverse(U) for U in Vhat.factors]), stats


def apply_laplacian(T: TuckerTensor, h: float, kind: str = DIRICHLET) -> np.ndarray:
    """Dense ``Lap_h T = -(1/h^2) sum_i T x_i T_n`` (for checks at small sizes)."""
    X = T.full()
    out = np.zeros_like(X)
    for mode, n in enumerate(T.shape):
        L = second_difference(n, kind)
        out -= np.moveaxis(np.tensordot(L, X, axes=(1, mode)), 0, mode)
    return out / h ** 2


def grid_points(n: int, kind: str = DIRICHLET) -> np.ndarray:
    """Normalized positions in ``(0, 1)``: vertex grid for Dirichlet, cell centres for Neumann."""
    if kind == DIRICHLET:
        return np.arange(1, n + 1) / (n + 1)
    return (np.arange(n) + 0.5) / n


def prolongate(T: TuckerTensor, n_fine: int, kind: str = DIRICHLET) -> TuckerTensor:
    """Linear interpolation of every factor column onto a finer grid.

    Points beyond the outermost coarse nodes are extrapolated linearly, so constant
    and affine factors carry over exactly. Factors are re-orthonormalized.
    """
    n_coarse = T.shape[0]
    if any(n != n_coarse for n in T.shape):
        raise ValueError("prolongate expects equal extents in every mode")
    if n_fine < n_coarse:
        raise ValueError(f"n_fine={n_fine} is coarser than {n_coarse}")
    tc, tf = grid_points(n_coarse, kind), grid_points(n_fine, kind)
    factors = [make_interp_spline(tc, U, k=1, axis=0)(tf) for U in T.factors]
    return from_factors(T.core, factors)
