"""Closed-form quantities for a fixed linear-Gaussian policy and mean field.

Everything here is exact (up to floating point) and model-based; the
learning modules use it only for diagnostics and for the oracle modes.
"""
from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, NotContraction, SingularSolve
from .linalg import (
    as_vector,
    checked_solve,
    riccati_gain,
    solve_lyapunov,
    solve_riccati,
    spectral_radius,
    svec,
    sym_kron,
)
from .model import LinearGaussianPolicy, check_stable, closed_loop


@dataclass(frozen=True)
class PolicyQuantities:
    mu_Kb: np.ndarray
    Phi_K: np.ndarray
    P_K: np.ndarray
    f_Kb: np.ndarray
    Psi_eps: np.ndarray
    J1: float
    J2: float
    J: float


@dataclass(frozen=True)
class QParams:
    """Action-value parameters.

    ``Q(x, u) = psi(x, u) @ alpha + beta`` with ``psi`` the centred feature of
    :func:`lqmfg.critic.feature` evaluated at the exact mean ``mu_z``.
    """

    Upsilon: np.ndarray
    p: np.ndarray
    q: np.ndarray
    alpha: np.ndarray
    beta: float
    mu_z: np.ndarray

    def blocks(self, m):
        U = self.Upsilon
        return U[:m, :m], U[:m, m:], U[m:, :m], U[m:, m:]


@dataclass(frozen=True)
class ZChain:
    L: np.ndarray
    nu: np.ndarray
    mu_z: np.ndarray
    Sigma_z: np.ndarray
    Psi_delta: np.ndarray


@dataclass(frozen=True)
class ThetaSystem:
    Theta: np.ndarray
    Theta_tilde: np.ndarray
    mean_psi: np.ndarray
    mean_cost_psi: np.ndarray
    lambda_K: float
    chain: ZChain


@dataclass(frozen=True)
class ContractionDiagnostics:
    K_star: np.ndarray
    L1: float
    L2: float
    L3: float
    L0: float


@dataclass(frozen=True)
class ConvexityDiagnostics:
    """``nu_K`` and ``iota_K`` use the unscaled sum; ``hessian`` is the true one."""

    nu_K: float
    iota_K: float
    hessian: np.ndarray


def _K(policy_or_K):
    if isinstance(policy_or_K, LinearGaussianPolicy):
        return policy_or_K.K
    return np.atleast_2d(np.asarray(policy_or_K, dtype=float))


def _sym(M):
    return 0.5 * (M + M.T)


def _psd_sqrt(M):
    w, V = np.linalg.eigh(_sym(M))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def effective_noise_cov(model, literal_sigma=False):
    """``sigma^2 B B^T + Psi_omega``; ``literal_sigma`` uses ``sigma`` instead."""
    scale = model.sigma if literal_sigma else model.sigma**2
    return scale * model.B @ model.B.T + model.Psi_omega


def mean_field_drift(model, mu):
    return model.A_bar @ as_vector(mu) + model.d


def stationary_mean(model, policy, mu):
    check_stable(model, policy.K)
    G = np.eye(model.m) - model.A + model.B @ policy.K
    rhs = model.B @ policy.b + mean_field_drift(model, mu)
    return checked_solve(G, rhs, rtol=1e-12)


def stationary_cov(model, policy_or_K, literal_sigma=False):
    K = _K(policy_or_K)
    check_stable(model, K)
    return solve_lyapunov(closed_loop(model, K), effective_noise_cov(model, literal_sigma))


def bellman_P(model, policy_or_K):
    K = _K(policy_or_K)
    check_stable(model, K)
    return solve_lyapunov(closed_loop(model, K).T, model.Q + K.T @ model.R @ K)


def J1(model, policy_or_K, literal_sigma=False):
    P = bellman_P(model, policy_or_K)
    return float(np.trace(P @ effective_noise_cov(model, literal_sigma)))


def _J2_matrix(model, K):
    R = model.R
    return np.block([[model.Q + K.T @ R @ K, -K.T @ R], [-R @ K, R]])


def J2(model, policy, mu):
    mu_Kb = stationary_mean(model, policy, mu)
    v = np.concatenate([mu_Kb, policy.b])
    return float(v @ _J2_matrix(model, policy.K) @ v)


def f_vector(model, policy, mu, P=None):
    K, b = policy.K, policy.b
    if P is None:
        P = bellman_P(model, K)
    G = np.eye(model.m) - model.A + model.B @ K
    rhs = (closed_loop(model, K).T @ P @ (model.B @ b + mean_field_drift(model, mu))
           - K.T @ model.R @ b)
    return checked_solve(G.T, rhs)


def policy_quantities(model, policy, mu, literal_sigma=False):
    policy.check(model)
    mu = as_vector(mu)
    mu_Kb = stationary_mean(model, policy, mu)
    Psi_eps = effective_noise_cov(model, literal_sigma)
    Phi = solve_lyapunov(closed_loop(model, policy.K), Psi_eps)
    P = bellman_P(model, policy.K)
    f = f_vector(model, policy, mu, P)
    j1 = float(np.trace(P @ Psi_eps))
    v = np.concatenate([mu_Kb, policy.b])
    j2 = float(v @ _J2_matrix(model, policy.K) @ v)
    total = j1 + j2 + model.sigma**2 * float(np.trace(model.R)) + float(mu @ model.Q_bar @ mu)
    return PolicyQuantities(mu_Kb=mu_Kb, Phi_K=Phi, P_K=P, f_Kb=f, Psi_eps=Psi_eps,
                            J1=j1, J2=j2, J=total)


def expected_cost(model, policy, mu):
    return policy_quantities(model, policy, mu).J


def upsilon(model, policy_or_K, P=None):
    K = _K(policy_or_K)
    if P is None:
        P = bellman_P(model, K)
    A, B = model.A, model.B
    U = np.block([[model.Q + A.T @ P @ A, A.T @ P @ B],
                  [B.T @ P @ A, model.R + B.T @ P @ B]])
    return _sym(U)


def eval_V(model, policy, mu, x):
    pq = policy_quantities(model, policy, mu)
    x = as_vector(x)
    P, mu_Kb = pq.P_K, pq.mu_Kb
    return float(x @ P @ x - np.trace(P @ pq.Phi_K) + 2.0 * pq.f_Kb @ (x - mu_Kb)
                 - mu_Kb @ P @ mu_Kb)


def _eval_Q_explicit(model, policy, mu, pq, U, p, q, x, u):
    K, b, R = policy.K, policy.b, model.R
    P, mu_Kb, f = pq.P_K, pq.mu_Kb, pq.f_Kb
    g = mean_field_drift(model, mu)
    z = np.concatenate([x, u])
    lin = np.concatenate([p, q])
    const = (-np.trace(P @ pq.Phi_K)
             - model.sigma**2 * (np.trace(R) + np.trace(model.B.T @ P @ model.B))
             - b @ R @ b + 2.0 * b @ R @ K @ mu_Kb
             - mu_Kb @ (model.Q + K.T @ R @ K + P) @ mu_Kb
             + 2.0 * f @ (g - mu_Kb) + g @ P @ g)
    return float(z @ U @ z + 2.0 * lin @ z + const)


def q_params(model, policy, mu):
    """Quadratic, linear and constant parts of the action-value function.

    The linear block of ``alpha`` is ``2 * (Upsilon @ mu_z + (p; q))`` so that
    ``psi @ alpha + beta`` reproduces ``Q`` exactly with centred features.
    """
    pq = policy_quantities(model, policy, mu)
    U = upsilon(model, policy.K, pq.P_K)
    w = model.A_bar @ as_vector(mu) + model.d
    h = pq.P_K @ w + pq.f_Kb
    p, q = model.A.T @ h, model.B.T @ h
    mu_z = np.concatenate([pq.mu_Kb, -policy.K @ pq.mu_Kb + policy.b])
    alpha = np.concatenate([svec(U), 2.0 * (U @ mu_z + np.concatenate([p, q]))])
    # the centred feature vanishes at z = mu_z, so beta is Q there
    beta = _eval_Q_explicit(model, policy, mu, pq, U, p, q, mu_z[:model.m], mu_z[model.m:])
    return QParams(Upsilon=U, p=p, q=q, alpha=alpha, beta=beta, mu_z=mu_z)


def eval_Q(model, policy, mu, x, u):
    pq = policy_quantities(model, policy, mu)
    U = upsilon(model, policy.K, pq.P_K)
    h = pq.P_K @ mean_field_drift(model, mu) + pq.f_Kb
    return _eval_Q_explicit(model, policy, mu, pq, U, model.A.T @ h, model.B.T @ h,
                            as_vector(x), as_vector(u))


def natural_gradient_K(model, policy_or_K):
    K = _K(policy_or_K)
    m = model.m
    U = upsilon(model, K)
    return U[m:, m:] @ K - U[m:, :m]


def grad_K_J1(model, policy_or_K):
    K = _K(policy_or_K)
    return 2.0 * natural_gradient_K(model, K) @ stationary_cov(model, K)


def b_direction(model, policy, mu):
    """``Upsilon22 (-K mu_Kb + b) + Upsilon21 mu_Kb + q``, half the b-gradient."""
    m = model.m
    pq = policy_quantities(model, policy, mu)
    U = upsilon(model, policy.K, pq.P_K)
    h = pq.P_K @ mean_field_drift(model, mu) + pq.f_Kb
    q = model.B.T @ h
    mu_Kb = pq.mu_Kb
    return U[m:, m:] @ (-policy.K @ mu_Kb + policy.b) + U[m:, :m] @ mu_Kb + q


def grad_b_J2(model, policy, mu):
    return 2.0 * b_direction(model, policy, mu)


def _intercept_core(model):
    """``M = (I-A) Q^{-1} (I-A)^T + B R^{-1} B^T`` and ``Q^{-1}(I-A)^T``."""
    IA = np.eye(model.m) - model.A
    QinvIAt = np.linalg.solve(model.Q, IA.T)
    RinvBt = np.linalg.solve(model.R, model.B.T)
    M = _sym(IA @ QinvIAt + model.B @ RinvBt)
    return M, QinvIAt, RinvBt


def optimal_b(model, policy_or_K, mu):
    K = _K(policy_or_K)
    M, QinvIAt, RinvBt = _intercept_core(model)
    try:
        y = checked_solve(M, mean_field_drift(model, mu))
    except SingularSolve as exc:
        raise SingularSolve("intercept system is numerically singular") from exc
    return (K @ QinvIAt - RinvBt) @ y


def optimal_J2(model, mu):
    """``min_b J2(K, b)``; independent of ``K``."""
    M, _, _ = _intercept_core(model)
    g = mean_field_drift(model, mu)
    return float(g @ checked_solve(M, g))


def convexity_constants(model, policy_or_K):
    K = _K(policy_or_K)
    check_stable(model, K)
    Gi_B = checked_solve(np.eye(model.m) - model.A + model.B @ K, model.B)
    Rh, Qh = _psd_sqrt(model.R), _psd_sqrt(model.Q)
    Y1 = Rh @ K @ Gi_B - Rh
    Y2 = Qh @ Gi_B
    H = _sym(Y1.T @ Y1 + Y2.T @ Y2)
    s = np.linalg.svd(H, compute_uv=False)
    return ConvexityDiagnostics(nu_K=float(s.min()), iota_K=float(s.max()), hessian=2.0 * H)


def z_chain(model, policy, mu):
    K, b = policy.K, policy.b
    check_stable(model, K)
    m, k = model.m, model.k
    A, B, Pw = model.A, model.B, model.Psi_omega
    L = np.block([[A, B], [-K @ A, -K @ B]])
    g = mean_field_drift(model, mu)
    nu = np.concatenate([g, -K @ g + b])
    Psi_delta = _sym(np.block([[Pw, -Pw @ K.T],
                               [-K @ Pw, K @ Pw @ K.T + model.sigma**2 * np.eye(k)]]))
    Sigma_z = solve_lyapunov(L, Psi_delta)
    mu_Kb = stationary_mean(model, policy, mu)
    mu_z = np.concatenate([mu_Kb, -K @ mu_Kb + b])
    return ZChain(L=L, nu=nu, mu_z=mu_z, Sigma_z=Sigma_z, Psi_delta=Psi_delta)


def sigma_z_from_phi(model, policy):
    """Joint covariance assembled from ``Phi_K`` and ``K``."""
    K = policy.K
    Phi = stationary_cov(model, K)
    return np.block([[Phi, -Phi @ K.T],
                     [-K @ Phi, K @ Phi @ K.T + model.sigma**2 * np.eye(model.k)]])


def mean_cost_feature(model, policy, mu, chain=None):
    """``E[c(x, u) psi(x, u)]`` under the stationary joint law."""
    if chain is None:
        chain = z_chain(model, policy, mu)
    mu = as_vector(mu)
    S, mz = chain.Sigma_z, chain.mu_z
    D = np.zeros_like(S)
    D[:model.m, :model.m] = model.Q
    D[model.m:, model.m:] = model.R
    c0 = float(mz @ D @ mz + mu @ model.Q_bar @ mu)
    first = svec(_sym(2.0 * S @ D @ S + np.sum(S * D) * S)) + c0 * svec(S)
    second = 2.0 * S @ D @ mz
    return np.concatenate([first, second])


def theta_closed_form(model, policy, mu):
    chain = z_chain(model, policy, mu)
    S, L = chain.Sigma_z, chain.L
    n = S.shape[0]
    ns = n * (n + 1) // 2
    top = 2.0 * sym_kron(S, S) @ (np.eye(ns) - sym_kron(L, L)).T
    bottom = S @ (np.eye(n) - L).T
    Theta = np.zeros((ns + n, ns + n))
    Theta[:ns, :ns] = top
    Theta[ns:, ns:] = bottom
    mean_psi = np.concatenate([svec(S), np.zeros(n)])
    Tt = np.zeros((ns + n + 1, ns + n + 1))
    Tt[0, 0] = 1.0
    Tt[1:, 0] = mean_psi
    Tt[1:, 1:] = Theta
    lam = float(np.linalg.svd(Tt, compute_uv=False).min())
    return ThetaSystem(Theta=Theta, Theta_tilde=Tt, mean_psi=mean_psi,
                       mean_cost_psi=mean_cost_feature(model, policy, mu, chain),
                       lambda_K=lam, chain=chain)


def riccati_solution(model):
    """Cached ``(X, K*)`` for the model; ``K*`` does not depend on ``mu``."""
    if "riccati" not in model._cache:
        X = solve_riccati(model.A, model.B, model.Q, model.R)
        model._cache["riccati"] = (X, riccati_gain(X, model.A, model.B, model.R))
    return model._cache["riccati"]


def optimal_gain(model):
    return riccati_solution(model)[1]


def lambda1(model, mu):
    K = optimal_gain(model)
    return LinearGaussianPolicy(K.copy(), optimal_b(model, K, mu))


def lambda2(model, mu, policy):
    return stationary_mean(model, policy, mu)


def lambda_op(model, mu):
    return lambda2(model, mu, lambda1(model, mu))


def contraction_constants(model):
    K = optimal_gain(model)
    M, QinvIAt, RinvBt = _intercept_core(model)
    L1 = (np.linalg.norm(checked_solve(M, model.A_bar), 2)
          * np.linalg.norm(K @ QinvIAt - RinvBt, 2))
    gap = 1.0 - spectral_radius(closed_loop(model, K))
    L2 = np.linalg.norm(model.A_bar, 2) / gap
    L3 = np.linalg.norm(model.B, 2) / gap
    return ContractionDiagnostics(K_star=K.copy(), L1=float(L1), L2=float(L2),
                                  L3=float(L3), L0=float(L1 * L3 + L2))


def nash_mean_direct(model):
    """Equilibrium mean from the affine fixed-point equation, no iteration.

    ``Lambda(mu) = mu_{K*,b*}`` with ``b*`` affine in ``mu``; writing
    ``Lambda(mu) = T mu + t`` the equilibrium solves ``(I - T) mu = t``.
    """
    m = model.m
    t = lambda_op(model, np.zeros(m))
    T = np.column_stack([lambda_op(model, e) - t for e in np.eye(m)])
    return checked_solve(np.eye(m) - T, t, rtol=1e-12)


def exact_nash(model, mu0, tol=1e-12, max_iters=10_000, return_history=False):
    """Banach iteration ``mu <- Lambda(mu)``.

    Returns ``(mu_star, policy_star)``; with ``return_history`` also the list
    of iterates ``mu_0, mu_1, ...`` (last entry is ``mu_star``).
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    diag = contraction_constants(model)
    if diag.L0 >= 1.0:
        raise NotContraction(f"L0 = {diag.L0:.6g} >= 1")
    mu = as_vector(mu0).copy()
    history = [mu.copy()]
    for _ in range(int(max_iters)):
        nxt = lambda_op(model, mu)
        done = np.linalg.norm(nxt - mu) <= tol
        mu = nxt
        history.append(mu.copy())
        if done:
            break
    else:
        raise NoConvergence(f"no fixed point within {max_iters} iterations")
    # the final step was below tol, so Lambda(mu) is within L0 * tol of mu
    pi = lambda1(model, mu)
    return (mu, pi, history) if return_history else (mu, pi)
