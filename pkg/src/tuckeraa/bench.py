"""Experiment runner: writes one CSV per run.

Usage::

    tuckeraa-bench --experiment approx-fn --n 50 --out fig1.csv
    tuckeraa-bench --config bratu.json --precond --out bratu.csv

A JSON config file gives any :class:`ExperimentConfig` field; command-line flags
override it. The first CSV line is a ``# config:`` comment holding the complete
configuration, followed by a header row.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .anderson import AAParams, tucker_aa
from .cross import C2DConfig, c2d, c2di, random_start
from .poisson import PoissonProblem, poisson_solve, prolongate
from .problems import (AllenCahnMap, BratuMap, allen_cahn_initial, bratu_initial_guess,
                       dense_from_oracle, helmholtz_oracle, function_tensor)
from .reference import MAX_DENSE_UNKNOWNS, poisson_direct
from .tucker import TuckerTensor, hosvd, rank_one

log = logging.getLogger("tuckeraa.bench")

EXPERIMENTS = ("approx-fn", "helmholtz", "poisson-bench", "bratu", "allen-cahn")


@dataclass
class ExperimentConfig:
    experiment: str = "approx-fn"
    n: int | None = None
    d: int = 3
    tol: float | None = None
    seed: int = 0
    out: str | None = None
    # approx-fn
    functions: list = field(default_factory=lambda: ["X1", "X2"])
    ranks: list = field(default_factory=lambda: list(range(2, 15)))
    # helmholtz
    kappas: list = field(default_factory=lambda: [1.0, 4.0, 16.0, 64.0])
    corner_start: float = 10.0
    corner_stop: float = 2.0
    corner_step: float = 0.05
    # poisson-bench
    levels: list = field(default_factory=lambda: [31, 63, 127, 255, 511, 1023])
    validate_dense: bool = False
    # Tucker-AA experiments
    precond: bool = False
    theta: float | None = None
    window: int | None = None
    c2d_max_iters: int = 50
    q: int = 4
    alpha: float | None = None
    tol_rel: float | None = None
    eps_h0: float | None = None
    max_iter: int = 1000
    lam: float = 1.0
    nu: float = 0.01
    dt: float = 0.1
    steps: int = 10
    slice_out: str | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.theta is not None and not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be >= 1")
        if self.c2d_max_iters < 1:
            raise ValueError("c2d-max-iters must be >= 1")
        if self.experiment == "helmholtz" and min(self.kappas) <= 0:
            raise ValueError("wave numbers must be positive")
        if self.experiment == "allen-cahn" and not self.precond and self.alpha is None:
            raise ValueError("allen-cahn without preconditioning needs an explicit alpha")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


def _f(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------


def run_approx_functions(cfg: ExperimentConfig):
    """HOSVD / C2Di / C2D error against average rank for the function tensors."""
    n = cfg.n or 50
    rng = np.random.default_rng(cfg.seed)
    cols = ["function", "rank", "hosvd_err", "c2di_err", "c2d_tol", "c2d_err",
            "c2d_avg_rank", "c2d_iters", "c2d_max_inflation", "c2d_samples"]
    rows = []
    for name in cfg.functions:
        shape = (n, n, n) if name in ("X1", "X2") else (n, (4 * n) // 3, n)
        X = dense_from_oracle(function_tensor(name, shape))
        xnorm = np.linalg.norm(X)
        for r in cfg.ranks:
            H = hosvd(X, ranks=[min(r, m) for m in shape])
            err = np.linalg.norm(H.full() - X)
            U0 = [np.linalg.qr(rng.standard_normal((m, min(r, m))))[0] for m in shape]
            Ti = c2di(function_tensor(name, shape), U0)
            ei = np.linalg.norm(Ti.full() - X)
            oracle = function_tensor(name, shape)
            tol = max(err, 1e-14 * xnorm)
            T, st = c2d(oracle, random_start(shape, rng), C2DConfig(tol=tol, q=cfg.q,
                        iter_max=cfg.c2d_max_iters), rng=rng)
            ec = np.linalg.norm(T.full() - X)
            rows.append([name, r, _f(err / xnorm), _f(ei / xnorm), _f(tol), _f(ec / xnorm),
                         _f(np.mean(T.ranks)), st.iterations, _f(st.max_inflation), oracle.count])
            log.info("%s r=%d hosvd=%.2e c2d=%.2e", name, r, err / xnorm, ec / xnorm)
    return cols, rows, []


def run_helmholtz(cfg: ExperimentConfig):
    """Rank and C2D iterations of the Green's function as the cube approaches the source."""
    n = cfg.n or 100
    tol = cfg.tol if cfg.tol is not None else 1e-4
    rng = np.random.default_rng(cfg.seed)
    count = int(round((cfg.corner_start - cfg.corner_stop) / cfg.corner_step)) + 1
    corners = cfg.corner_start - cfg.corner_step * np.arange(count)
    cols = ["kappa", "corner", "avg_rank", "c2d_iters", "cumulative_mean_iters", "samples"]
    rows = []
    for kappa in cfg.kappas:
        U = random_start((n,) * cfg.d, rng)
        total = 0
        for step, x in enumerate(corners):
            oracle = helmholtz_oracle(float(x), float(kappa), cfg.d, n)
            T, st = c2d(oracle, U, C2DConfig(tol=tol, q=cfg.q, iter_max=cfg.c2d_max_iters),
                        rng=rng)
            U = T.factors
            total += st.iterations
            rows.append([_f(kappa), _f(x), _f(np.mean(T.ranks)), st.iterations,
                         _f(total / (step + 1)), oracle.count])
        log.info("kappa=%g done, last ranks %s", kappa, T.ranks)
    return cols, rows, []


POISSON_DOMAIN = (-1.0, 1.0)


def poisson_grid(n: int):
    """Interior nodes of ``[-1, 1]`` and their spacing ``2 / (n + 1)``."""
    a, b = POISSON_DOMAIN
    h = (b - a) / (n + 1)
    return a + h * np.arange(1, n + 1), h


def gaussian_rhs(n: int, d: int) -> TuckerTensor:
    """``exp(-36 rho^2)`` with ``rho^2 = sum_i (x_i - i/100)^2`` on ``[-1, 1]^d``: rank one."""
    x, _ = poisson_grid(n)
    return rank_one([np.exp(-36.0 * (x - (i + 1) / 100.0) ** 2) for i in range(d)])


def run_poisson_bench(cfg: ExperimentConfig):
    """Warm-started fast Poisson solves over a sequence of refinements."""
    tol_rel = cfg.tol if cfg.tol is not None else 1e-6
    rng = np.random.default_rng(cfg.seed)
    d = cfg.d
    if cfg.validate_dense:
        too_big = [n for n in cfg.levels if n ** d > MAX_DENSE_UNKNOWNS]
        if too_big:
            raise MemoryError(f"dense validation requested at n={too_big[0]}, d={d}: "
                              f"more than {MAX_DENSE_UNKNOWNS} unknowns")
    cols = ["n", "d", "seconds", "c2d_iters", "samples", "avg_rank", "n_pow_d", "rel_err_dense"]
    rows, failures = [], []
    prev = None
    for n in cfg.levels:
        F = gaussian_rhs(n, d)
        _, h = poisson_grid(n)
        tol = tol_rel * F.norm()
        warm = None if prev is None else prolongate(prev, n).factors
        t0 = time.perf_counter()
        V, st = poisson_solve(PoissonProblem(F, h), tol, warm=warm, q=cfg.q,
                              iter_max=cfg.c2d_max_iters, rng=rng)
        secs = time.perf_counter() - t0
        rel = float("nan")
        if cfg.validate_dense:
            ref = poisson_direct(F.full(), h)
            err = np.linalg.norm(V.full() - ref)
            rel = err / np.linalg.norm(ref)
            if err > 10 * tol:
                failures.append(f"n={n}: error {err:.3e} exceeds 10 tol = {10 * tol:.1e}")
        rows.append([n, d, _f(secs), st.iterations, st.samples, _f(np.mean(V.ranks)),
                     n ** d, _f(rel)])
        log.info("n=%d ranks=%s iters=%d %.3fs", n, V.ranks, st.iterations, secs)
        prev = V
    return cols, rows, failures


def _aa_rows(hist, d):
    buf = io.StringIO()
    hist.write_csv(buf, d)
    lines = list(csv.reader(io.StringIO(buf.getvalue())))
    return lines[0], lines[1:]


def bratu_params(cfg: ExperimentConfig) -> tuple[BratuMap, AAParams]:
    n = cfg.n or 64
    h = 1.0 / (n + 1)
    if cfg.precond:
        alpha = 0.1 if cfg.alpha is None else cfg.alpha
        theta = cfg.theta
        eps_h0 = 1e-8 if cfg.eps_h0 is None else cfg.eps_h0
    else:
        alpha = 0.1 * h ** 2 if cfg.alpha is None else cfg.alpha
        theta = 0.9 if cfg.theta is None else cfg.theta
        eps_h0 = 1e-2 if cfg.eps_h0 is None else cfg.eps_h0
    tol_rel = 1e-7 if cfg.tol_rel is None else cfg.tol_rel
    params = AAParams(window=cfg.window or 4, theta=theta, tol=cfg.tol,
                      tol_rel=None if cfg.tol is not None else tol_rel,
                      c2d_iter_max=cfg.c2d_max_iters, q=cfg.q, eps_h0=eps_h0,
                      max_iter=cfg.max_iter)
    return BratuMap(n, lam=cfg.lam, alpha=alpha, precond=cfg.precond, d=cfg.d), params


def run_bratu(cfg: ExperimentConfig):
    """Per-iteration residuals, ranks and C2D counts of Tucker-AA on Bratu."""
    H, params = bratu_params(cfg)
    X0 = bratu_initial_guess(H.n, cfg.lam, cfg.d)
    _, hist = tucker_aa(H, X0, params, rng=np.random.default_rng(cfg.seed))
    cols, rows = _aa_rows(hist, cfg.d)
    failures = [] if hist.converged else [
        f"Tucker-AA stopped after {hist.iterations} iterations at rho/rho0="
        f"{hist.residuals[-1] / hist.rho0:.3e}"]
    return cols, rows, failures


def allen_cahn_params(cfg: ExperimentConfig) -> AAParams:
    tol_rel = 5e-2 if cfg.tol_rel is None else cfg.tol_rel
    return AAParams(window=cfg.window or 3, theta=0.9 if cfg.theta is None else cfg.theta,
                    tol=cfg.tol, tol_rel=None if cfg.tol is not None else tol_rel,
                    c2d_iter_max=cfg.c2d_max_iters, q=cfg.q,
                    eps_h0=1e-2 if cfg.eps_h0 is None else cfg.eps_h0, max_iter=cfg.max_iter)


def allen_cahn_run(cfg: ExperimentConfig):
    """Time-step Allen-Cahn; yields ``(step, X, history)`` after every step."""
    n = cfg.n or 63
    alpha = 0.2 if cfg.alpha is None else cfg.alpha
    params = allen_cahn_params(cfg)
    rng = np.random.default_rng(cfg.seed)
    X = allen_cahn_initial(n, cfg.d)
    for step in range(1, cfg.steps + 1):
        H = AllenCahnMap(n, cfg.nu, cfg.dt, alpha, X, precond=cfg.precond)
        X, hist = tucker_aa(H, X, params, rng=rng)
        yield step, X, hist


def run_allen_cahn(cfg: ExperimentConfig):
    """Per-timestep averages of rank, AA iterations and C2D iterations."""
    cols = ["step", "time", "aa_iters", "converged", "avg_rank", "avg_c2d_iters", "rho0",
            "final_rho"] + [f"rank{i + 1}" for i in range(cfg.d)]
    rows, failures = [], []
    X = None
    for step, X, hist in allen_cahn_run(cfg):
        rows.append([step, _f(step * cfg.dt), hist.iterations, int(hist.converged),
                     _f(np.mean(X.ranks)), _f(np.mean(hist.c2d_iters)), _f(hist.rho0),
                     _f(hist.residuals[-1]), *X.ranks])
        if not hist.converged:
            failures.append(f"step {step}: Tucker-AA did not converge")
        log.info("step %d ranks=%s aa=%d", step, X.ranks, hist.iterations)
    if cfg.slice_out and X is not None:
        write_slice(X, cfg)
    return cols, rows, failures


def write_slice(X: TuckerTensor, cfg: ExperimentConfig):
    """Values on the grid plane nearest to ``x3 = pi/2`` (cell-centred grid)."""
    n = X.shape[2]
    x = 2.0 * np.pi * (np.arange(n) + 0.5) / n
    k = int(np.argmin(np.abs(x - np.pi / 2)))
    sets = [np.arange(X.shape[0]), np.arange(X.shape[1]), [k]] + [[0]] * (X.ndim - 3)
    S = X.subtensor(sets).reshape(X.shape[0], X.shape[1])
    with open(cfg.slice_out, "w", newline="") as fh:
        fh.write(f"# config: {cfg.to_json()}\n")
        fh.write(f"# x3 = {_f(x[k])}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i1", "i2", "x1", "x2", "value"])
        for i in range(S.shape[0]):
            for j in range(S.shape[1]):
                w.writerow([i, j, _f(x[i]), _f(x[j]), _f(S[i, j])])


RUNNERS = {
    "approx-fn": run_approx_functions,
    "helmholtz": run_helmholtz,
    "poisson-bench": run_poisson_bench,
    "bratu": run_bratu,
    "allen-cahn": run_allen_cahn,
}


def write_csv(fh, cfg: ExperimentConfig, cols, rows):
    fh.write(f"# config: {cfg.to_json()}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(cols)
    w.writerows(rows)


def run(cfg: ExperimentConfig):
    """Run ``cfg``; returns ``(columns, rows, failures)``."""
    return RUNNERS[cfg.experiment](cfg)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tuckeraa-bench", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output CSV (default: stdout)")
    p.add_argument("--theta", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--c2d-max-iters", type=int, dest="c2d_max_iters")
    p.add_argument("--precond", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_from_args(args) -> ExperimentConfig:
    values = {}
    if args.config:
        with open(args.config) as fh:
            values = json.load(fh)
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for key in ("experiment", "n", "d", "tol", "seed", "out", "theta", "window",
                "c2d_max_iters", "precond"):
        val = getattr(args, key)
        if val is not None:
            values[key] = val
    return ExperimentConfig(**values)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (ValueError, TypeError, OSError) as exc:
        parser.error(str(exc))
    try:
        cols, rows, failures = run(cfg)
    except MemoryError as exc:
        print(f"tuckeraa-bench: {exc}", file=sys.stderr)
        return 3
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            write_csv(fh, cfg, cols, rows)
    else:
        write_csv(sys.stdout, cfg, cols, rows)
    for msg in failures:
        print(f"tuckeraa-bench: invariant failed: {msg}", file=sys.stderr)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
