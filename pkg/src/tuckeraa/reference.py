"""Dense reference solvers for validating the low-rank results at small sizes."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .poisson import DIRICHLET, second_difference

MAX_DENSE_UNKNOWNS = 2_000_000


def _check_size(n, d):
    if n ** d > MAX_DENSE_UNKNOWNS:
        raise MemoryError(f"dense reference with {n}^{d} unknowns exceeds the guard "
                          f"of {MAX_DENSE_UNKNOWNS}")


def sparse_laplacian(n: int, d: int, h: float, kind: str = DIRICHLET) -> sp.csr_matrix:
    """``Lap_h`` acting on column-major vectorized ``n^d`` tensors."""
    _check_size(n, d)
    T = sp.csr_matrix(second_difference(n, kind))
    eye = sp.identity(n, format="csr")
    L = sp.csr_matrix((n ** d, n ** d))
    for mode in range(d):
        # column-major: mode 0 varies fastest, so it is the rightmost Kronecker factor
        ops = [T if m == mode else eye for m in reversed(range(d))]
        term = ops[0]
        for op in ops[1:]:
            term = sp.kron(term, op, format="csr")
        L = L + term
    return (-L / h ** 2).tocsr()


def _vec(X):
    return np.asarray(X).ravel(order="F")


def _unvec(x, n, d):
    return x.reshape((n,) * d, order="F")


def poisson_direct(F: np.ndarray, h: float, kind: str = DIRICHLET,
                   shift: float | None = None, method: str = "lu") -> np.ndarray:
    """Solve ``Lap_h V = F`` or ``(I - shift Lap_h) V = F`` on the full grid.

    ``method="lu"`` uses a sparse LU factorization; ``"cg"`` runs conjugate gradients
    on the (sign-adjusted) positive definite system to a relative residual of 1e-14.
    """
    n, d = F.shape[0], F.ndim
    L = sparse_laplacian(n, d, h, kind)
    if shift is None:
        A, b = -L, -_vec(F)
    else:
        A, b = sp.identity(n ** d, format="csr") - shift * L, _vec(F)
    if method == "lu":
        x = spla.spsolve(A.tocsc(), b, permc_spec="MMD_AT_PLUS_A")
    elif method == "cg":
        x, info = spla.cg(A, b, rtol=1e-14, atol=0.0, maxiter=20 * n * d)
        if info != 0:
            raise RuntimeError(f"CG failed with code {info}")
    else:
        raise ValueError(f"unknown method {method!r}")
    return _unvec(x, n, d)


def bratu_newton(n: int, lam: float = 1.0, d: int = 3, v0=None, tol: float = 1e-12,
                 max_iter: int = 30) -> np.ndarray:
    """Newton's method for ``Lap_h v + lam exp(v) = 0`` with zero Dirichlet data.

    On the lower solution branch ``-(Lap_h + lam diag(exp v))`` is positive definite,
    so the Newton systems are solved by conjugate gradients.
    """
    h = 1.0 / (n + 1)
    L = sparse_laplacian(n, d, h)
    v = np.zeros(n ** d) if v0 is None else _vec(v0).copy()
    for _ in range(max_iter):
        g = L @ v + lam * np.exp(v)
        J = -(L + sp.diags(lam * np.exp(v)))
        dv, info = spla.cg(J, g, rtol=1e-13, atol=0.0, maxiter=5000)
        if info != 0:
            raise RuntimeError(f"CG failed with code {info}")
        v += dv
        if np.max(np.abs(dv)) < tol:
            return _unvec(v, n, d)
    raise RuntimeError("Bratu Newton iteration did not converge")


def allen_cahn_backward_euler(V0: np.ndarray, nu: float, dt: float, steps: int,
                              h: float, kind: str, tol: float = 1e-11,
                              max_newton: int = 30) -> list:
    """Backward-Euler states ``[V1, ..., V_steps]``, each step solved by Newton-CG.

    The Jacobian ``(1 - dt) I - dt nu Lap_h + 3 dt diag(v^2)`` is symmetric positive
    definite for ``dt < 1``, so conjugate gradients is used for the linear solves.
    """
    n, d = V0.shape[0], V0.ndim
    L = sparse_laplacian(n, d, h, kind)
    eye = sp.identity(n ** d, format="csr")
    base = (1.0 - dt) * eye - dt * nu * L
    v_old = _vec(V0).copy()
    out = []
    for _ in range(steps):
        v = v_old.copy()
        for _ in range(max_newton):
            g = v - v_old - dt * (nu * (L @ v) + v - v ** 3)
            J = base + sp.diags(3.0 * dt * v ** 2)
            dv, info = spla.cg(J, -g, rtol=1e-13, atol=0.0, maxiter=2000)
            if info != 0:
                raise RuntimeError(f"CG failed with code {info}")
            v += dv
            if np.max(np.abs(dv)) < tol:
                break
        else:
            raise RuntimeError("Allen-Cahn Newton iteration did not converge")
        out.append(_unvec(v.copy(), n, d))
        v_old = v
    return out
