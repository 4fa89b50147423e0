"""Benchmark tensors and PDE fixed-point maps."""
from __future__ import annotations

import numpy as np
import scipy.optimize
import scipy.special

from .anderson import FixedPointMap
from .cross import C2DConfig, EntrywiseOracle, TensorOracle, c2d
from .poisson import DIRICHLET, NEUMANN, PoissonProblem, poisson_solve
from .tucker import TuckerTensor, rank_one, rounded_sum

# ---------------------------------------------------------------------------
# function-generated test tensors (indices are 1-based in the formulas)


def _x1(i, j, k):
    return 1.0 / (i + j + k + 3.0)


def _x3(i, j, k):
    return ((i + 1.0) ** 3 + (j + 1.0) ** 3 + (k + 1.0) ** 3) ** (-1.0 / 3.0)


def _x4(i, j, k):
    return ((i + 1.0) ** 5 + (j + 1.0) ** 5 + (k + 1.0) ** 5) ** (-1.0 / 5.0)


def function_tensor(name: str, shape) -> TensorOracle:
    """Oracle for one of the function tensors ``X1``..``X4``."""
    shape = tuple(int(n) for n in shape)
    if name == "X1":
        return TensorOracle(shape, _x1)
    if name == "X2":
        grids = [-1.0 + 2.0 * np.arange(n) / (n - 1) for n in shape]
        return TensorOracle(shape, lambda i, j, k: np.exp(-(grids[0][i] * grids[1][j] * grids[2][k]) ** 2))
    if name == "X3":
        return TensorOracle(shape, _x3)
    if name == "X4":
        return TensorOracle(shape, _x4)
    raise ValueError(f"unknown test tensor {name!r}")


def dense_from_oracle(oracle: TensorOracle) -> np.ndarray:
    """Every entry of ``oracle`` (counts toward its sample counter)."""
    return oracle.subtensor([np.arange(n) for n in oracle.shape])


# ---------------------------------------------------------------------------
# Helmholtz free-space Green's function


def helmholtz_green_real(rho, kappa: float, d: int):
    """Real part of ``(i/4) (kappa / (2 pi rho))^(d/2-1) H^(1)_(d/2-1)(kappa rho)``."""
    if kappa <= 0:
        raise ValueError("wave number must be positive")
    rho = np.asarray(rho, dtype=float)
    if d == 3:
        # order 1/2: Y_{1/2}(z) = -sqrt(2/(pi z)) cos z
        return np.cos(kappa * rho) / (4.0 * np.pi * rho)
    if d == 2:
        return -0.25 * scipy.special.y0(kappa * rho)
    if d == 4:
        return -0.25 * (kappa / (2.0 * np.pi * rho)) * scipy.special.y1(kappa * rho)
    nu = d / 2.0 - 1.0
    return -0.25 * (kappa / (2.0 * np.pi * rho)) ** nu * scipy.special.yv(nu, kappa * rho)


def helmholtz_oracle(corner: float, kappa: float, d: int = 3, n: int = 100) -> TensorOracle:
    """Green's function sampled on the unit cube with corner ``(corner, 0, ..., 0)``."""
    t = np.linspace(0.0, 1.0, n)
    axes = [corner + t] + [t] * (d - 1)

    def f(*idx):
        rho2 = sum(ax[i] ** 2 for ax, i in zip(axes, idx))
        return helmholtz_green_real(np.sqrt(rho2), kappa, d)

    return TensorOracle((n,) * d, f)


# ---------------------------------------------------------------------------
# finite-difference Laplacian as Tucker terms


def _second_difference_apply(U, kind):
    """``T_n U`` for the Dirichlet or reflected (Neumann) stencil."""
    out = 2.0 * U
    out[1:] -= U[:-1]
    out[:-1] -= U[1:]
    if kind == NEUMANN:
        out[0] -= U[0]
        out[-1] -= U[-1]
    return out


def laplacian_terms(X: TuckerTensor, h: float, kind: str = DIRICHLET) -> list:
    """``Lap_h X`` as ``d`` (core, factors) pairs, one per differentiated mode."""
    terms = []
    for mode in range(X.ndim):
        factors = list(X.factors)
        factors[mode] = -_second_difference_apply(X.factors[mode], kind) / h ** 2
        terms.append((X.core, tuple(factors)))
    return terms


# ---------------------------------------------------------------------------
# Bratu


def bratu_theta(lam: float = 1.0) -> float:
    """Lower-branch root of ``cosh(t) = 4 t / sqrt(2 lam)``."""
    c = 4.0 / np.sqrt(2.0 * lam)
    t_min = np.arcsinh(c)
    if np.cosh(t_min) > c * t_min:
        raise ValueError(f"no 1-D Bratu solution for lambda={lam}")
    return float(scipy.optimize.brentq(lambda t: np.cosh(t) - c * t, 0.0, t_min))


def bratu_profile(x, lam: float = 1.0):
    """Exact 1-D Bratu solution ``2 log(cosh t / cosh(t (1 - 2x)))`` on ``[0, 1]``."""
    t = bratu_theta(lam)
    return 2.0 * np.log(np.cosh(t) / np.cosh(t * (1.0 - 2.0 * np.asarray(x))))


def bratu_initial_guess(n: int, lam: float = 1.0, d: int = 3) -> TuckerTensor:
    """1-D profile along the first axis, constant along the others (rank one)."""
    x = np.arange(1, n + 1) / (n + 1)
    return rank_one([bratu_profile(x, lam)] + [np.ones(n)] * (d - 1))


class BratuMap(FixedPointMap):
    """Richardson map for ``Lap_h v + lam exp(v) = 0`` with zero Dirichlet data on ``[0,1]^d``.

    Without preconditioning ``H(X) = X + alpha (Lap_h X + lam exp(X))``. With it the
    residual is mapped through ``(-Lap_h)^{-1}`` (the fast spectral solver), i.e.
    ``H(X) = X - alpha Lap_h^{-1}(Lap_h X + lam exp(X))``.
    """

    description = "bratu"

    def __init__(self, n: int, lam: float = 1.0, alpha: float = 0.1, precond: bool = False,
                 d: int = 3):
        super().__init__((n,) * d)
        self.n, self.lam, self.alpha, self.precond, self.d = n, lam, alpha, precond, d
        self.h = 1.0 / (n + 1)

    def residual_oracle(self, X: TuckerTensor) -> EntrywiseOracle:
        lam = self.lam
        terms = [(X.core, X.factors)] + laplacian_terms(X, self.h)
        return EntrywiseOracle(terms, lambda v, idx: sum(v[1:]) + lam * np.exp(v[0]))

    def oracle(self, X: TuckerTensor) -> EntrywiseOracle:
        lam, alpha = self.lam, self.alpha
        terms = [(X.core, X.factors)] + laplacian_terms(X, self.h)
        return EntrywiseOracle(
            terms, lambda v, idx: v[0] + alpha * (sum(v[1:]) + lam * np.exp(v[0])))

    def preconditioner_norm(self) -> float:
        """``|(-Lap_h)^{-1}|_2``."""
        lam_min = 2.0 * (1.0 - np.cos(np.pi / (self.n + 1)))
        return self.h ** 2 / (self.d * lam_min)

    def apply(self, X, tol, q=4, iter_max=50, r_max=None, rng=None):
        if not self.precond:
            return super().apply(X, tol, q=q, iter_max=iter_max, r_max=r_max, rng=rng)
        return _preconditioned_apply(self, X, tol, q, iter_max, r_max, rng,
                                     dict(h=self.h, kind=DIRICHLET))


# ---------------------------------------------------------------------------
# Allen-Cahn


def allen_cahn_initial(n: int, d: int = 3) -> TuckerTensor:
    """``prod_i sin(x_i)`` on the cell-centred grid of ``[0, 2 pi]^d``."""
    x = 2.0 * np.pi * (np.arange(n) + 0.5) / n
    return rank_one([np.sin(x)] * d)


class AllenCahnMap(FixedPointMap):
    """One backward-Euler step of ``v_t = nu Lap v + v - v^3`` with zero Neumann data.

    Residual ``R(X) = X - X_old - dt (nu Lap_h X + X - X^3)`` on a cell-centred grid of
    ``[0, 2 pi]^d``. The map is ``X - alpha M R(X)`` with ``M = (I - dt nu Lap_h)^{-1}``
    (DCT-based) or ``M = I``.
    """

    description = "allen-cahn"

    def __init__(self, n: int, nu: float, dt: float, alpha: float, X_old: TuckerTensor,
                 precond: bool = True):
        d = X_old.ndim
        super().__init__((n,) * d)
        self.n, self.nu, self.dt, self.alpha, self.X_old, self.precond = n, nu, dt, alpha, X_old, precond
        self.d = d
        self.h = 2.0 * np.pi / n

    def _terms(self, X):
        return ([(X.core, X.factors), (self.X_old.core, self.X_old.factors)]
                + laplacian_terms(X, self.h, NEUMANN))

    def _residual(self, v):
        x = v[0]
        return x - v[1] - self.dt * (self.nu * sum(v[2:]) + x - x ** 3)

    def residual_oracle(self, X: TuckerTensor) -> EntrywiseOracle:
        return EntrywiseOracle(self._terms(X), lambda v, idx: self._residual(v))

    def oracle(self, X: TuckerTensor) -> EntrywiseOracle:
        alpha = self.alpha
        return EntrywiseOracle(self._terms(X), lambda v, idx: v[0] - alpha * self._residual(v))

    def preconditioner_norm(self) -> float:
        return 1.0

    def apply(self, X, tol, q=4, iter_max=50, r_max=None, rng=None):
        if not self.precond:
            return super().apply(X, tol, q=q, iter_max=iter_max, r_max=r_max, rng=rng)
        return _preconditioned_apply(self, X, tol, q, iter_max, r_max, rng,
                                     dict(h=self.h, kind=NEUMANN, shift=self.dt * self.nu))


def allen_cahn_step(n, nu, dt, alpha, X_old, precond=True) -> AllenCahnMap:
    return AllenCahnMap(n, nu, dt, alpha, X_old, precond=precond)


def _preconditioned_apply(fmap, X, tol, q, iter_max, r_max, rng, problem_kwargs):
    """``X - alpha P`` where ``P`` solves the spectral problem with the residual as rhs.

    For Bratu ``P = Lap_h^{-1} R``, for Allen-Cahn ``P = (I - dt nu Lap_h)^{-1} R``. The
    residual tolerance is scaled by ``1 / (alpha |M|)`` so that its error enters
    ``H(X)`` at the level ``0.1 tol``; the solve itself runs at ``0.1 tol``.
    """
    tol_r = 0.1 * tol / (fmap.alpha * fmap.preconditioner_norm())
    cfg = C2DConfig(tol=tol_r, q=q, iter_max=iter_max, r_max=r_max)
    R, stats = c2d(fmap.residual_oracle(X), X.factors, cfg, rng=rng)
    P, _ = poisson_solve(PoissonProblem(R, **problem_kwargs), 0.1 * tol, warm=X.factors, q=q,
                         iter_max=iter_max, r_max=r_max, rng=rng)
    H = rounded_sum([(1.0, X), (-fmap.alpha, P)], tol, r_max=r_max)
    return H, stats.iterations
