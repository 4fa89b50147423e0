import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_orthonormal, random_tucker
from tuckeraa.problems import dense_from_oracle, function_tensor
from tuckeraa.tucker import (TuckerTensor, cheb_norm, diff_norm, eval_entry, fold, frob_norm,
                             from_factors, hosvd, load_tucker, matricize, mode_product,
                             rank_one, retruncate, rounded_sum, save_tucker, zeros)


def dense_unfold(X, mode):
    """Reference unfolding by explicit index loops."""
    others = [j for j in range(X.ndim) if j != mode]
    cols = int(np.prod([X.shape[j] for j in others]))
    M = np.empty((X.shape[mode], cols))
    for idx in np.ndindex(*X.shape):
        col, stride = 0, 1
        for j in others:
            col += idx[j] * stride
            stride *= X.shape[j]
        M[idx[mode], col] = X[idx]
    return M


shapes = st.lists(st.integers(1, 5), min_size=1, max_size=4)


# --- matricize / fold -------------------------------------------------------

def test_matricize_layout():
    X = np.arange(1, 9, dtype=float).reshape((2, 2, 2), order="F")
    assert np.array_equal(matricize(X, 0), [[1, 3, 5, 7], [2, 4, 6, 8]])


def test_matricize_matches_loop_definition(rng):
    X = rng.standard_normal((3, 4, 2, 3))
    for mode in range(4):
        assert np.array_equal(matricize(X, mode), dense_unfold(X, mode))


@given(shapes, st.data())
def test_fold_round_trip(shape, data):
    X = np.random.default_rng(len(shape)).standard_normal(shape)
    mode = data.draw(st.integers(0, len(shape) - 1))
    M = matricize(X, mode)
    assert np.array_equal(fold(M, mode, X.shape), X)
    assert np.array_equal(matricize(fold(M, mode, X.shape), mode), M)


def test_matricize_bad_mode():
    with pytest.raises(ValueError):
        matricize(np.zeros((2, 2)), 2)
    with pytest.raises(ValueError):
        fold(np.zeros((2, 2)), -1, (2, 2))


def test_unfolding_rank_equals_multilinear_rank(rng):
    T = random_tucker((3, 4, 5), (2, 3, 2), rng)
    X = T.full()
    for mode, r in enumerate(T.ranks):
        assert np.linalg.matrix_rank(matricize(X, mode)) == r
        assert hosvd(X, tol=1e-10 * np.linalg.norm(X)).ranks[mode] == r


# --- mode products ------------------------------------------------------------

def test_mode_product_identity(rng):
    X = rng.standard_normal((3, 4, 5))
    for mode, n in enumerate(X.shape):
        assert np.array_equal(mode_product(X, np.eye(n), mode), X)


def test_mode_product_separable(rng):
    a, b, c = rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal(5)
    M = rng.standard_normal((2, 3))
    X = np.einsum("i,j,k->ijk", a, b, c)
    assert np.allclose(mode_product(X, M, 0), np.einsum("i,j,k->ijk", M @ a, b, c), atol=1e-14)


def test_mode_product_matches_unfolding(rng):
    X = rng.standard_normal((4, 4, 4))
    M = rng.standard_normal((3, 4))
    Y = mode_product(X, M, 1)
    ref = fold(M @ matricize(X, 1), 1, (4, 3, 4))
    assert np.max(np.abs(Y - ref)) <= 1e-13


def test_mode_product_tucker_matches_dense(rng):
    T = random_tucker((5, 6, 4), (2, 3, 2), rng)
    M = rng.standard_normal((7, 6))
    Y = mode_product(T, M, 1)
    assert Y.shape == (5, 7, 4)
    assert np.allclose(Y.full(), mode_product(T.full(), M, 1), atol=1e-12)
    for U in Y.factors:
        assert np.linalg.norm(U.T @ U - np.eye(U.shape[1])) <= 1e-12


def test_mode_product_dimension_mismatch(rng):
    with pytest.raises(ValueError):
        mode_product(rng.standard_normal((3, 4)), np.eye(3), 1)
    with pytest.raises(ValueError):
        mode_product(random_tucker((3, 4), (1, 1), rng), np.eye(3), 1)


# --- TuckerTensor invariants --------------------------------------------------

def test_rejects_non_orthonormal_factor():
    with pytest.raises(ValueError):
        TuckerTensor(np.ones((1, 1)), (np.ones((3, 1)), np.ones((2, 1)) / np.sqrt(2)))


def test_rejects_rank_above_extent():
    with pytest.raises(ValueError):
        TuckerTensor(np.ones((3, 1)), (np.eye(2, 3), np.ones((2, 1)) / np.sqrt(2)))


def test_full_shape(rng):
    T = random_tucker((3, 4, 5), (1, 2, 3), rng)
    assert T.full().shape == (3, 4, 5)
    assert T.shape == (3, 4, 5) and T.ranks == (1, 2, 3)


# --- entries and norms ----------------------------------------------------------

def test_eval_entry_rank_one():
    T = rank_one([np.ones(3), np.ones(4)])
    assert np.isclose(eval_entry(T, (2, 1)), 1.0)
    U = T.factors
    assert np.isclose(eval_entry(T, (0, 3)), T.core.item() * U[0][0, 0] * U[1][3, 0])


def test_eval_entry_matches_hosvd_reconstruction(rng):
    X = rng.standard_normal((4, 5, 3))
    T = hosvd(X, ranks=X.shape)
    for idx in [(0, 0, 0), (3, 4, 2), (1, 2, 1)]:
        assert abs(eval_entry(T, idx) - X[idx]) <= 1e-12 * cheb_norm(X)
    idx = rng.integers(0, [4, 5, 3], size=(50, 3))
    assert np.allclose(T.entries(idx), X[tuple(idx.T)], atol=1e-12)


def test_eval_entry_zero_and_range():
    Z = zeros((3, 3))
    assert eval_entry(Z, (2, 1)) == 0.0
    with pytest.raises(IndexError):
        eval_entry(Z, (3, 0))


def test_subtensor_and_fibers(rng):
    T = random_tucker((4, 5, 6), (2, 2, 3), rng)
    X = T.full()
    sets = [[0, 3], [4, 1, 2], [5]]
    assert np.allclose(T.subtensor(sets), X[np.ix_(*sets)], atol=1e-13)
    idx = np.array([[0, 1, 2], [0, 4, 5]])
    F = T.fibers(0, idx)
    assert np.allclose(F, X[:, [1, 4], [2, 5]], atol=1e-13)


def test_frob_norm_cases(rng):
    assert frob_norm(zeros((3, 4))) == 0.0
    assert np.isclose(frob_norm(rank_one([np.eye(3)[0], np.eye(2)[1]], scale=3.0)), 3.0)
    T = random_tucker((5, 5, 5), (5, 5, 5), rng)
    assert abs(frob_norm(T) - np.linalg.norm(T.full())) <= 1e-12 * np.linalg.norm(T.full())


@given(st.lists(st.integers(1, 8), min_size=1, max_size=4), st.integers(0, 2 ** 32 - 1))
def test_norm_identity_property(shape, seed):
    rng = np.random.default_rng(seed)
    ranks = [int(rng.integers(1, n + 1)) for n in shape]
    T = random_tucker(shape, ranks, rng)
    ref = np.linalg.norm(T.full())
    assert abs(frob_norm(T) - ref) <= 1e-12 * max(ref, 1.0)


def test_cheb_norm():
    assert cheb_norm(np.array([[1.0, -3.0], [2.0, 0.5]])) == 3.0


# --- HOSVD ------------------------------------------------------------------------

def test_hosvd_exact_rank(rng):
    X = random_tucker((6, 7, 5), (2, 2, 2), rng).full()
    T = hosvd(X, ranks=(2, 2, 2))
    assert np.linalg.norm(T.full() - X) <= 1e-12 * np.linalg.norm(X)


def test_hosvd_tolerance_random(rng):
    for _ in range(100):
        shape = tuple(rng.integers(2, 7, size=3))
        X = rng.standard_normal(shape)
        tol = 10.0 ** rng.uniform(-6, 0.5)
        T = hosvd(X, tol=tol)
        assert np.linalg.norm(X - T.full()) <= tol
    X = rng.standard_normal((6, 6, 6))
    assert np.linalg.norm(X - hosvd(X, tol=1e-6).full()) <= 1e-6


def test_hosvd_x1_error_decreases_with_rank():
    X = dense_from_oracle(function_tensor("X1", (40, 40, 40)))
    errs = [np.linalg.norm(hosvd(X, ranks=(r, r, r)).full() - X) for r in range(1, 9)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_hosvd_core_is_projection(rng):
    X = rng.standard_normal((4, 5, 6))
    T = hosvd(X, ranks=(2, 3, 3))
    ref = np.einsum("ijk,ia,jb,kc->abc", X, *T.factors)
    assert np.allclose(T.core, ref, atol=1e-12)


def test_hosvd_argument_errors(rng):
    X = rng.standard_normal((3, 3))
    with pytest.raises(ValueError):
        hosvd(X)
    with pytest.raises(ValueError):
        hosvd(X, tol=1e-3, ranks=(1, 1))
    with pytest.raises(ValueError):
        hosvd(X, ranks=(4, 1))


# --- retruncate -------------------------------------------------------------------

def core_with_spectrum(s, rng):
    """3-way core whose unfoldings all have singular values ``s`` (superdiagonal)."""
    r = len(s)
    G = np.zeros((r, r, r))
    G[np.arange(r), np.arange(r), np.arange(r)] = s
    return G


def test_retruncate_small_tol_keeps_tensor(rng):
    T = random_tucker((6, 6, 6), (3, 3, 3), rng)
    R = retruncate(T, 1e-13)
    assert R.ranks == T.ranks
    assert np.allclose(R.full(), T.full(), atol=1e-12)


def test_retruncate_huge_tol_gives_zero(rng):
    T = random_tucker((6, 6, 6), (3, 3, 3), rng)
    R = retruncate(T, 2 * frob_norm(T))
    assert R.ranks == (1, 1, 1) and frob_norm(R) == 0.0


def test_retruncate_prescribed_spectrum(rng):
    s = np.array([1.0, 0.5, 0.25, 1e-3, 5e-4, 1e-4])
    G = core_with_spectrum(s, rng)
    factors = tuple(random_orthonormal(10, 6, rng) for _ in range(3))
    T = TuckerTensor(G, factors)
    # tail energy beyond 3 values is ~1.1e-3; per-mode threshold tol / sqrt(3)
    tol = np.sqrt(3) * 0.05
    R = retruncate(T, tol)
    assert R.ranks == (3, 3, 3)
    assert np.linalg.norm(R.full() - T.full()) <= tol


@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-8, 1.0))
def test_retruncate_error_and_rank_monotone(seed, rel):
    rng = np.random.default_rng(seed)
    T = random_tucker((6, 5, 4), (4, 4, 3), rng)
    tol = rel * frob_norm(T)
    R = retruncate(T, tol)
    assert all(a <= b for a, b in zip(R.ranks, T.ranks))
    assert np.linalg.norm(R.full() - T.full()) <= tol * (1 + 1e-12)


# --- rounded sums -------------------------------------------------------------------

def test_rounded_sum_single_term(rng):
    T = random_tucker((5, 6, 7), (2, 3, 2), rng)
    S = rounded_sum([(1.0, T)], 1e-15)
    assert S.ranks == T.ranks
    assert np.allclose(S.full(), T.full(), atol=1e-13)


def test_rounded_sum_cancellation(rng):
    T = random_tucker((5, 6, 7), (2, 3, 2), rng)
    S = rounded_sum([(1.0, T), (-1.0, T)], 1e-12)
    assert S.ranks == (1, 1, 1)
    assert frob_norm(S) == 0.0


def test_rounded_sum_three_terms(rng):
    terms = [(c, random_tucker((8, 8, 8), (2, 2, 2), rng)) for c in (1.0, -0.5, 2.0)]
    S = rounded_sum(terms, 1e-12)
    dense = sum(c * T.full() for c, T in terms)
    assert np.max(np.abs(S.full() - dense)) <= 1e-10
    assert all(r <= 6 for r in S.ranks)


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
def test_rounded_sum_linearity(seed, count):
    rng = np.random.default_rng(seed)
    terms = [(rng.standard_normal(), random_tucker((5, 4, 6), rng.integers(1, 4, size=3), rng))
             for _ in range(count)]
    S = rounded_sum(terms, 1e-15)
    dense = sum(c * T.full() for c, T in terms)
    assert np.linalg.norm(S.full() - dense) <= 1e-10 * max(np.linalg.norm(dense), 1e-300) + 1e-14
    for U in S.factors:
        assert np.linalg.norm(U.T @ U - np.eye(U.shape[1])) <= 1e-12


@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-6, 0.5), st.integers(1, 4))
def test_rounded_sum_tolerance_then_cap(seed, rel, cap):
    rng = np.random.default_rng(seed)
    terms = [(1.0, random_tucker((6, 6, 6), (3, 3, 3), rng)),
             (0.3, random_tucker((6, 6, 6), (3, 3, 3), rng))]
    dense = sum(c * T.full() for c, T in terms)
    tol = rel * np.linalg.norm(dense)
    S = rounded_sum(terms, tol)
    assert np.linalg.norm(S.full() - dense) <= tol * (1 + 1e-10)
    C = rounded_sum(terms, tol, r_max=cap)
    assert all(r <= min(cap, s) for r, s in zip(C.ranks, S.ranks))


def test_rounded_sum_errors(rng):
    with pytest.raises(ValueError):
        rounded_sum([], 1e-3)
    with pytest.raises(ValueError):
        rounded_sum([(1.0, zeros((2, 3))), (1.0, zeros((3, 2)))], 1e-3)


def test_diff_norm(rng):
    A = random_tucker((5, 5, 5), (2, 2, 2), rng)
    B = random_tucker((5, 5, 5), (3, 1, 2), rng)
    assert np.isclose(diff_norm(A, B), np.linalg.norm(A.full() - B.full()), rtol=1e-12)


def test_from_factors_orthonormalizes(rng):
    core = rng.standard_normal((2, 3))
    factors = [rng.standard_normal((5, 2)), rng.standard_normal((4, 3))]
    T = from_factors(core, factors)
    assert np.allclose(T.full(), factors[0] @ core @ factors[1].T, atol=1e-12)


# --- binary I/O ---------------------------------------------------------------------

def test_save_load_round_trip(tmp_path, rng):
    T = random_tucker((5, 4, 3), (2, 3, 1), rng)
    path = tmp_path / "t.bin"
    save_tucker(T, path)
    S = load_tucker(path)
    assert np.array_equal(S.core, T.core)
    assert all(np.array_equal(a, b) for a, b in zip(S.factors, T.factors))


def test_save_layout(tmp_path, rng):
    T = random_tucker((3, 2), (2, 1), rng)
    path = tmp_path / "t.bin"
    save_tucker(T, path)
    raw = path.read_bytes()
    head = np.frombuffer(raw[:40], dtype="<i8")
    assert head.tolist() == [2, 3, 2, 2, 1]
    body = np.frombuffer(raw[40:], dtype="<f8")
    assert np.array_equal(body[:2], T.core.ravel(order="F"))
    assert np.array_equal(body[2:8], T.factors[0].ravel(order="F"))
    assert np.array_equal(body[8:], T.factors[1].ravel(order="F"))


def test_load_rejects_truncated_file(tmp_path, rng):
    path = tmp_path / "t.bin"
    save_tucker(random_tucker((3, 3), (1, 1), rng), path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_tucker(path)
