"""Freeze reference values computed without the package under test.

Uses scipy's Riccati/Lyapunov solvers, scalar hand formulas and generic
numerical minimisation. Run once; the tests only read ``frozen.json``.
"""
import json
import math
from pathlib import Path

import numpy as np
from scipy import linalg as sla
from scipy import optimize

OUT = Path(__file__).with_name("frozen.json")


def scalar_reference():
    A, B, Abar, d, Q, R, Qbar, W, s = 0.5, 1.0, 0.2, 0.1, 1.0, 1.0, 0.5, 0.04, 0.1
    # scalar Riccati x = Q + A^2 x - (ABx)^2/(R + B^2 x) reduces to x^2 - 0.25x - 1 = 0
    x = (0.25 + math.sqrt(0.25**2 + 4.0)) / 2.0
    K = B * x * A / (R + B * B * x)
    rho = A - B * K
    eps = s**2 * B * B + W
    P0 = Q / (1 - A * A)
    Phi0 = eps / (1 - A * A)
    mu_Kb0 = d / (1 - A)
    J0 = P0 * eps + mu_Kb0**2 * Q + s**2 * R
    inner = (1 - A) ** 2 / Q + B * B / R
    b0 = (0 * (1 - A) / Q - B / R) * d / inner

    def lam(mu):
        g = Abar * mu + d
        b = (K * (1 - A) / Q - B / R) * g / inner
        return (B * b + g) / (1 - A + B * K)

    t = lam(0.0)
    slope = lam(1.0) - t
    mu_star = t / (1 - slope)
    g = Abar * mu_star + d
    b_star = (K * (1 - A) / Q - B / R) * g / inner
    L1 = abs(Abar / inner) * abs(K * (1 - A) / Q - B / R)
    L2 = Abar / (1 - abs(rho))
    L3 = B / (1 - abs(rho))
    return {
        "X_star": x, "K_star": K, "rho_star": rho, "P0": P0, "Phi0": Phi0,
        "mu_Kb0": mu_Kb0, "J_K0_b0_mu0": J0, "J2_K0_b0_mu0": mu_Kb0**2 * Q,
        "b0_opt": b0, "J2_opt_mu0": d * d / inner,
        "mu_star": mu_star, "b_star": b_star, "Lambda_slope": slope,
        "L1": L1, "L2": L2, "L3": L3, "L0": L1 * L3 + L2,
        "Phi_star": eps / (1 - rho * rho),
    }


def random_instance(rng, m, k):
    A = rng.normal(size=(m, m))
    A *= 0.8 / max(abs(np.linalg.eigvals(A)))
    B = rng.normal(size=(m, k))
    Abar = 0.05 * rng.normal(size=(m, m))
    d = rng.normal(size=m)

    def spd(n, shift):
        X = rng.normal(size=(n, n))
        return X @ X.T / n + shift * np.eye(n)

    return dict(A=A, B=B, A_bar=Abar, d=d, Q=spd(m, 0.5), R=spd(k, 0.5),
                Q_bar=0.1 * spd(m, 0.0), Psi_omega=spd(m, 0.2), sigma=0.3)


def instance_values(p, rng):
    A, B, Q, R = p["A"], p["B"], p["Q"], p["R"]
    m, k = B.shape
    X = sla.solve_discrete_are(A, B, Q, R)
    Kstar = np.linalg.solve(R + B.T @ X @ B, B.T @ X @ A)
    K = 0.1 * rng.normal(size=(k, m))
    while max(abs(np.linalg.eigvals(A - B @ K))) >= 0.95:
        K *= 0.5
    b = rng.normal(size=k)
    mu = rng.normal(size=m)
    F = A - B @ K
    eps = p["sigma"] ** 2 * B @ B.T + p["Psi_omega"]
    Phi = sla.solve_discrete_lyapunov(F, eps)
    P = sla.solve_discrete_lyapunov(F.T, Q + K.T @ R @ K)
    g = p["A_bar"] @ mu + p["d"]
    mu_Kb = np.linalg.solve(np.eye(m) - F, B @ b + g)
    u_mean = -K @ mu_Kb + b
    # average cost from the stationary law of (x, u)
    J = (np.trace(Q @ Phi) + mu_Kb @ Q @ mu_Kb + np.trace(R @ (K @ Phi @ K.T))
         + p["sigma"] ** 2 * np.trace(R) + u_mean @ R @ u_mean + mu @ p["Q_bar"] @ mu)

    def argmin_J2(Kg, gg):
        # J2 is a linear least-squares objective in b
        Gi = np.linalg.inv(np.eye(m) - A + B @ Kg)
        Qh, Rh = sla.sqrtm(Q).real, sla.sqrtm(R).real
        M = np.vstack([Qh @ Gi @ B, Rh @ (np.eye(k) - Kg @ Gi @ B)])
        r = -np.concatenate([Qh @ Gi @ gg, -Rh @ Kg @ Gi @ gg])
        bb = sla.lstsq(M, r)[0]
        return bb, float(np.sum((M @ bb - r) ** 2))

    b_opt, J2_opt = argmin_J2(K, g)

    def lam(mv):
        gg = p["A_bar"] @ mv + p["d"]
        bs = argmin_J2(Kstar, gg)[0]
        return np.linalg.solve(np.eye(m) - A + B @ Kstar, B @ bs + gg)

    sol = optimize.root(lambda mv: lam(mv) - mv, np.zeros(m), tol=1e-14)
    mu_star = sol.x
    return {
        "params": {key: np.asarray(val).tolist() for key, val in p.items()},
        "X_star": X.tolist(), "K_star": Kstar.tolist(),
        "K": K.tolist(), "b": b.tolist(), "mu": mu.tolist(),
        "Phi": Phi.tolist(), "P": P.tolist(), "mu_Kb": mu_Kb.tolist(), "J": float(J),
        "b_opt": b_opt.tolist(), "J2_opt": J2_opt, "mu_star": mu_star.tolist(),
    }


def main():
    rng = np.random.default_rng(20240611)
    instances = [instance_values(random_instance(rng, m, k), rng)
                 for m, k in [(1, 1), (2, 1), (2, 2), (3, 1), (3, 2), (4, 2)]]
    OUT.write_text(json.dumps({"scalar": scalar_reference(), "random": instances}, indent=1) + "\n")


if __name__ == "__main__":
    main()
