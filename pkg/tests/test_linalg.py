import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg as sla

from lqmfg.errors import BadLength, DimMismatch, NotSymmetric, RiccatiFailure, SingularSolve, Unstable
from lqmfg.linalg import (
    checked_solve,
    project_ball,
    riccati_gain,
    riccati_residual,
    smat,
    solve_lyapunov,
    solve_riccati,
    spectral_radius,
    svec,
    sym_kron,
)

from conftest import random_spd

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(1, 8)


def rand_sym(rng, n):
    X = rng.normal(size=(n, n))
    return X + X.T


def test_svec_examples():
    np.testing.assert_allclose(svec([[1.0, 2.0], [2.0, 3.0]]), [1.0, 2.0 * np.sqrt(2), 3.0])
    np.testing.assert_array_equal(svec(np.eye(3)), [1, 0, 0, 1, 0, 1])
    np.testing.assert_array_equal(svec([[5.0]]), [5.0])


def test_smat_example_and_bad_length():
    np.testing.assert_allclose(smat([1.0, np.sqrt(2), 3.0]), [[1.0, 1.0], [1.0, 3.0]])
    with pytest.raises(BadLength):
        smat(np.ones(4))


def test_svec_rejects_asymmetric():
    with pytest.raises(NotSymmetric):
        svec([[1.0, 2.0], [0.0, 1.0]])


@settings(max_examples=60, deadline=None)
@given(seeds, dims)
def test_svec_round_trip_and_inner_product(seed, n):
    rng = np.random.default_rng(seed)
    M, N = rand_sym(rng, n), rand_sym(rng, n)
    assert np.max(np.abs(smat(svec(M)) - M)) < 1e-12
    assert abs(svec(M) @ svec(N) - np.sum(M * N)) < 1e-9 * (1 + abs(np.sum(M * N)))


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 6))
def test_sym_kron_defining_identity(seed, n):
    rng = np.random.default_rng(seed)
    G, H, M = rng.normal(size=(n, n)), rng.normal(size=(n, n)), rand_sym(rng, n)
    lhs = sym_kron(G, H) @ svec(M)
    rhs = svec(0.5 * (H @ M @ G.T + G @ M @ H.T))
    assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_sym_kron_of_identity_is_identity():
    np.testing.assert_allclose(sym_kron(np.eye(4), np.eye(4)), np.eye(10), atol=1e-15)


def test_sym_kron_shape_mismatch():
    with pytest.raises(DimMismatch):
        sym_kron(np.eye(2), np.eye(3))


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 6))
def test_sym_kron_eigenvalues_for_commuting_pair(seed, n):
    rng = np.random.default_rng(seed)
    V = np.linalg.qr(rng.normal(size=(n, n)))[0]
    a, b = rng.normal(size=n), rng.normal(size=n)
    M, N = V @ np.diag(a) @ V.T, V @ np.diag(b) @ V.T
    got = np.sort(np.linalg.eigvals(sym_kron(M, N)).real)
    want = np.sort([(a[i] * b[j] + a[j] * b[i]) / 2 for i, j in itertools.combinations_with_replacement(range(n), 2)])
    assert np.max(np.abs(got - want)) < 1e-9


def test_spectral_radius():
    assert spectral_radius([[0.0, 1.0], [-1.0, 0.0]]) == pytest.approx(1.0)
    assert spectral_radius(np.diag([0.3, -0.7])) == pytest.approx(0.7)


def test_lyapunov_scalar_and_zero():
    assert solve_lyapunov([[0.5]], [[0.05]])[0, 0] == pytest.approx(0.05 / 0.75, rel=1e-14)
    S = random_spd(np.random.default_rng(0), 3)
    np.testing.assert_allclose(solve_lyapunov(np.zeros((3, 3)), S), S, atol=1e-15)


def test_lyapunov_matches_scipy():
    rng = np.random.default_rng(1)
    D = rng.normal(size=(4, 4))
    D *= 0.9 / spectral_radius(D)
    S = random_spd(rng, 4)
    X = solve_lyapunov(D, S)
    np.testing.assert_allclose(X, sla.solve_discrete_lyapunov(D, S), rtol=1e-9, atol=1e-12)


def test_lyapunov_rejects_unstable():
    with pytest.raises(Unstable):
        solve_lyapunov([[1.0]], [[1.0]])


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 5))
def test_lyapunov_residual_property(seed, n):
    rng = np.random.default_rng(seed)
    D = rng.normal(size=(n, n))
    D *= rng.uniform(0.0, 0.95) / max(spectral_radius(D), 1e-12)
    S = random_spd(rng, n)
    X = solve_lyapunov(D, S)
    assert np.linalg.norm(D @ X @ D.T + S - X) < 1e-12 * (1 + np.linalg.norm(X))
    assert np.allclose(X, X.T)


def test_riccati_scalar_reference(frozen):
    X = solve_riccati([[0.5]], [[1.0]], [[1.0]], [[1.0]])
    assert X[0, 0] == pytest.approx(frozen["scalar"]["X_star"], rel=1e-12)
    K = riccati_gain(X, np.array([[0.5]]), np.array([[1.0]]), np.array([[1.0]]))
    assert K[0, 0] == pytest.approx(frozen["scalar"]["K_star"], rel=1e-10)


def test_riccati_matches_frozen_instances(frozen):
    for entry in frozen["random"]:
        p = {key: np.atleast_2d(val) for key, val in entry["params"].items() if key in "ABQR"}
        X = solve_riccati(p["A"], p["B"], p["Q"], p["R"])
        np.testing.assert_allclose(X, entry["X_star"], rtol=1e-8, atol=1e-10)


def test_riccati_unstabilizable_fails():
    # an unstable mode the input cannot reach
    A = np.diag([1.5, 0.5])
    B = np.array([[0.0], [1.0]])
    with pytest.raises(RiccatiFailure):
        solve_riccati(A, B, np.eye(2), np.eye(1), max_iters=2000)


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(1, 4), st.integers(1, 4))
def test_riccati_residual_and_stability(seed, m, k):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m, m))
    A *= rng.uniform(0.2, 1.3) / max(spectral_radius(A), 1e-12)
    B = rng.normal(size=(m, k))
    Q, R = random_spd(rng, m), random_spd(rng, k)
    X = solve_riccati(A, B, Q, R)
    assert riccati_residual(X, A, B, Q, R) < 1e-10 * (1 + np.linalg.norm(X))
    assert spectral_radius(A - B @ riccati_gain(X, A, B, R)) < 1


def test_project_ball():
    np.testing.assert_allclose(project_ball([3.0, 4.0], [0.0, 0.0], 1.0), [0.6, 0.8])
    np.testing.assert_array_equal(project_ball([0.1, 0.1], 0.0, 1.0), [0.1, 0.1])
    np.testing.assert_allclose(project_ball([2.0], [1.0], 0.5), [1.5])


def test_checked_solve():
    np.testing.assert_allclose(checked_solve(np.diag([2.0, 4.0]), np.array([2.0, 2.0])), [1.0, 0.5])
    with pytest.raises(SingularSolve):
        checked_solve(np.zeros((2, 2)), np.ones(2))
