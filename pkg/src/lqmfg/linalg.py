"""Dense small-matrix primitives.

Symmetric vectorization uses the upper triangle read row-major, with
off-diagonal entries scaled by sqrt(2) so that the Euclidean inner product of
two svec vectors equals the Frobenius inner product of the matrices.
"""
import math

import numpy as np

from .errors import BadLength, DimMismatch, NotSymmetric, RiccatiFailure, SingularSolve, Unstable

SYM_TOL = 1e-10
STAB_MARGIN = 1e-8
LYAP_TOL = 1e-12
RIC_TOL = 1e-10
MAX_RIC_ITERS = 10**6

_SQRT2 = math.sqrt(2.0)


def as_matrix(M, name="matrix"):
    """Return ``M`` as a finite 2-d float array (scalars become 1x1)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise DimMismatch(f"{name} must be 2-d, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


def as_vector(v, name="vector"):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.ndim != 1:
        raise DimMismatch(f"{name} must be 1-d, got shape {v.shape}")
    return v


def _check_square(M, name):
    if M.shape[0] != M.shape[1]:
        raise DimMismatch(f"{name} must be square, got shape {M.shape}")


def svec_dim(n):
    return n * (n + 1) // 2


def smat_dim(length):
    """Inverse of :func:`svec_dim`; raises BadLength for non-triangular lengths."""
    n = int(round((math.sqrt(8 * length + 1) - 1) / 2))
    if n < 1 or svec_dim(n) != length:
        raise BadLength(f"length {length} is not a triangular number n(n+1)/2")
    return n


def _triu_scale(n):
    rows, cols = np.triu_indices(n)
    scale = np.where(rows == cols, 1.0, _SQRT2)
    return rows, cols, scale


def svec(M, sym_tol=SYM_TOL):
    """Symmetric vectorization of a symmetric matrix.

    Examples
    --------
    >>> svec([[1.0, 2.0], [2.0, 3.0]])
    array([1.        , 2.82842712, 3.        ])
    """
    M = as_matrix(M, "M")
    _check_square(M, "M")
    asym = np.max(np.abs(M - M.T)) if M.size else 0.0
    if asym > sym_tol * max(1.0, np.max(np.abs(M))):
        raise NotSymmetric(f"asymmetry {asym:.3e} exceeds tolerance")
    rows, cols, scale = _triu_scale(M.shape[0])
    return 0.5 * (M[rows, cols] + M[cols, rows]) * scale


def smat(v):
    """Inverse of :func:`svec`."""
    v = as_vector(v, "v")
    n = smat_dim(v.size)
    rows, cols, scale = _triu_scale(n)
    M = np.zeros((n, n))
    M[rows, cols] = v / scale
    M[cols, rows] = v / scale
    return M


def sym_kron(G, H):
    """Symmetric Kronecker product ``G (x)_s H`` as a matrix on svec-space.

    Defined by ``(G (x)_s H) svec(M) = svec(H M G^T + G M H^T) / 2`` and built
    column by column from the orthonormal basis of symmetric matrices.
    """
    G = as_matrix(G, "G")
    H = as_matrix(H, "H")
    _check_square(G, "G")
    if G.shape != H.shape:
        raise DimMismatch(f"G and H shapes differ: {G.shape} vs {H.shape}")
    n = G.shape[0]
    dim = svec_dim(n)
    out = np.empty((dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = 1.0
        E = smat(e)
        out[:, j] = svec(0.5 * (H @ E @ G.T + G @ E @ H.T), sym_tol=np.inf)
    return out


def spectral_radius(M):
    M = as_matrix(M, "M")
    _check_square(M, "M")
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def solve_lyapunov(D, S, stab_margin=STAB_MARGIN, lyap_tol=LYAP_TOL):
    """Solve ``X = D X D^T + S`` for a Schur-stable ``D``.

    The equation is rewritten on svec-space as ``(I - D (x)_s D) svec(X) =
    svec(S)`` and solved densely, followed by iterative refinement until the
    residual meets ``lyap_tol * (1 + ||X||_F)``.
    """
    D = as_matrix(D, "D")
    S = as_matrix(S, "S")
    _check_square(D, "D")
    if S.shape != D.shape:
        raise DimMismatch(f"S shape {S.shape} does not match D shape {D.shape}")
    rho = spectral_radius(D)
    if rho >= 1.0 - stab_margin:
        raise Unstable(f"spectral radius {rho:.6g} >= 1 - {stab_margin:g}")
    S = 0.5 * (S + S.T)
    op = np.eye(svec_dim(D.shape[0])) - sym_kron(D, D)
    X = smat(np.linalg.solve(op, svec(S)))
    for _ in range(5):
        resid = S + D @ X @ D.T - X
        if np.linalg.norm(resid) <= lyap_tol * (1.0 + np.linalg.norm(X)):
            break
        X = X + smat(np.linalg.solve(op, svec(0.5 * (resid + resid.T), sym_tol=np.inf)))
    return 0.5 * (X + X.T)


def riccati_residual(X, A, B, Q, R):
    """Frobenius norm of the discrete algebraic Riccati residual."""
    G = B.T @ X @ B + R
    rhs = A.T @ X @ A + Q - A.T @ X @ B @ np.linalg.solve(G, B.T @ X @ A)
    return float(np.linalg.norm(X - rhs))


def riccati_gain(X, A, B, R):
    """Optimal gain ``(B^T X B + R)^{-1} B^T X A`` for the convention u = -Kx."""
    return np.linalg.solve(B.T @ X @ B + R, B.T @ X @ A)


def solve_riccati(A, B, Q, R, ric_tol=RIC_TOL, max_iters=MAX_RIC_ITERS, damping=1.0):
    """Solve the discrete algebraic Riccati equation by value iteration.

    Iterates ``X <- (1 - damping) X + damping * F(X)`` from ``X = Q``, where
    ``F`` is the Riccati map. Once the iterate yields a stabilizing gain and
    stalls, a few policy-iteration (Hewer) steps polish the fixed point.

    Returns
    -------
    X : ndarray
        The symmetric positive definite solution.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    Q = as_matrix(Q, "Q")
    R = as_matrix(R, "R")
    m, k = B.shape
    if A.shape != (m, m) or Q.shape != (m, m) or R.shape != (k, k):
        raise DimMismatch("inconsistent shapes for A, B, Q, R")
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")

    X = Q.copy()
    converged = False
    for _ in range(max_iters):
        F = A.T @ X @ A + Q - A.T @ X @ B @ np.linalg.solve(B.T @ X @ B + R, B.T @ X @ A)
        X_new = (1.0 - damping) * X + damping * 0.5 * (F + F.T)
        if not np.all(np.isfinite(X_new)):
            break
        step = np.linalg.norm(X_new - X)
        X = X_new
        if step <= 1e-3 * ric_tol * (1.0 + np.linalg.norm(X)):
            converged = True
            break
    if not converged:
        raise RiccatiFailure(f"Riccati iteration did not converge in {max_iters} iterations")

    for _ in range(3):
        K = riccati_gain(X, A, B, R)
        if spectral_radius(A - B @ K) >= 1.0:
            break
        if riccati_residual(X, A, B, Q, R) <= 1e-2 * ric_tol * (1.0 + np.linalg.norm(X)):
            break
        X = solve_lyapunov((A - B @ K).T, Q + K.T @ R @ K)

    res = riccati_residual(X, A, B, Q, R)
    K = riccati_gain(X, A, B, R)
    if res > ric_tol * (1.0 + np.linalg.norm(X)) or spectral_radius(A - B @ K) >= 1.0:
        raise RiccatiFailure(f"Riccati residual {res:.3e} or unstable closed loop")
    if np.min(np.linalg.eigvalsh(X)) <= 0.0:
        raise RiccatiFailure("Riccati solution is not positive definite")
    return X


def project_ball(v, center, radius):
    """Euclidean projection of ``v`` onto the closed ball ``B(center, radius)``."""
    v = as_vector(v, "v")
    center = np.broadcast_to(as_vector(center, "center"), v.shape)
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    diff = v - center
    norm = np.linalg.norm(diff)
    if norm <= radius:
        return v.copy()
    return center + radius * diff / norm


def checked_solve(M, rhs, rtol=1e-8):
    """Linear solve with a residual check; raises SingularSolve on failure."""
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSolve(str(exc)) from exc
    resid = np.linalg.norm(M @ sol - rhs)
    if not np.all(np.isfinite(sol)) or resid > rtol * np.linalg.norm(rhs):
        raise SingularSolve(f"residual {resid:.3e} exceeds tolerance")
    return sol


__all__ = [
    "svec", "smat", "sym_kron", "spectral_radius", "solve_lyapunov", "solve_riccati",
    "project_ball", "riccati_residual", "riccati_gain", "checked_solve", "svec_dim",
    "smat_dim",
]
