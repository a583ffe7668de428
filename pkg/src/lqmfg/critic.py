"""Model-free policy evaluation with quadratic features.

Two estimators are provided: a primal-dual gradient TD method and plain
TD(0). Both first estimate the stationary mean from a short run, centre the
features at it, then learn ``(J, alpha)`` from a second run.
"""
from dataclasses import dataclass, field
import math

import numba
import numpy as np

from .errors import DimMismatch, NonFinite
from .linalg import as_vector, smat, spectral_radius, svec, svec_dim
from .model import check_stable, closed_loop, rollout, sample_stationary_start


def feature_dim(n):
    """Length of the feature for a joint dimension ``n = m + k``."""
    return svec_dim(n) + n


def centre(policy, mu_hat):
    mu_hat = as_vector(mu_hat)
    return np.concatenate([mu_hat, -policy.K @ mu_hat + policy.b])


def feature(x, u, mu_hat, policy):
    x, u, mu_hat = as_vector(x), as_vector(u), as_vector(mu_hat)
    k, m = policy.K.shape
    if x.size != m or u.size != k or mu_hat.size != m:
        raise DimMismatch("feature inputs do not match the policy dimensions")
    y = np.concatenate([x - mu_hat, u - (-policy.K @ mu_hat + policy.b)])
    return np.concatenate([svec(np.outer(y, y)), y])


def features(xs, us, z_hat):
    """Row-wise features for stacked states ``(T, m)`` and actions ``(T, k)``."""
    Y = np.hstack([xs, us]) - z_hat
    n = Y.shape[1]
    iu, ju = np.triu_indices(n)
    scale = np.where(iu == ju, 1.0, math.sqrt(2.0))
    return np.hstack([Y[:, iu] * Y[:, ju] * scale, Y])


@dataclass(frozen=True)
class ProjectionSets:
    """Box on ``zeta1`` and ``xi1``, Euclidean balls on ``zeta2`` and ``xi2``."""

    zeta1_max: float
    zeta2_radius: float
    xi1_max: float
    xi2_radius: float
    mode: str = "manual"

    def __post_init__(self):
        for name in ("zeta1_max", "zeta2_radius", "xi1_max", "xi2_radius"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be positive and finite, got {val}")


def default_projection_sets(model, J0, K, mode="theory", C=10.0, radii=None):
    """Projection radii for the critic.

    ``mode="theory"`` evaluates the closed-form radii in terms of an upper
    bound ``J0`` on the initial policy's cost; ``mode="manual"`` takes
    ``radii = (zeta1_max, zeta2_radius, xi1_max, xi2_radius)`` verbatim.
    """
    if mode == "manual":
        if radii is None:
            raise ValueError("manual projection mode needs explicit radii")
        return ProjectionSets(*map(float, radii), mode="manual")
    if mode != "theory":
        raise ValueError(f"unknown projection mode {mode!r}")
    if not J0 > 0:
        raise ValueError("J0 must be positive")
    K = np.atleast_2d(np.asarray(K, dtype=float))
    check_stable(model, K)
    rho = spectral_radius(closed_loop(model, K))
    A, B, Q, R = model.A, model.B, model.Q, model.R
    n2 = lambda M: np.linalg.norm(M, 2)
    nF = lambda M: np.linalg.norm(M, "fro")
    sQ = float(np.linalg.eigvalsh(Q).min())
    sR = float(np.linalg.eigvalsh(R).min())
    sW = float(np.linalg.eigvalsh(model.Psi_omega).min())
    kQ = float(np.linalg.cond(Q))
    kR = float(np.linalg.cond(R))
    ab = n2(A) + n2(B)
    M1 = ((nF(Q) + nF(R)) + (nF(A) ** 2 + nF(B) ** 2) * math.sqrt(model.m) * J0 / sW
          + ab * J0**2 / (sW * sQ)
          + ((n2(Q) + n2(R)) + ab**2 * J0 / sW) * J0 * (1.0 / sQ + 1.0 / sR))
    M2 = ab * (kQ + kR)
    Mxi = C * (M1 + M2) * J0**2 / sQ**2
    kf = nF(K)
    return ProjectionSets(
        zeta1_max=float(J0),
        zeta2_radius=float(M1 + M2 * (1.0 + kf) / (1.0 - rho)),
        xi1_max=float(J0),
        xi2_radius=float(Mxi * (1.0 + kf**2) ** 3 / (1.0 - rho)),
        mode="theory",
    )


@dataclass(frozen=True)
class CriticConfig:
    """Budgets and knobs shared by both critics.

    ``J0`` feeds the theory-mode projection radii when ``projections`` is not
    given. ``literal_update`` selects the printed ``zeta2`` direction
    ``psi (psi - psi')^T xi2`` instead of the gradient ``(psi - psi') psi^T xi2``.
    """

    T: int
    T_tilde: int
    gamma0: float = 0.5
    burn_in: int = 1000
    start_mode: str = "burn_in"
    projections: ProjectionSets | None = None
    J0: float | None = None
    C: float = 10.0
    literal_update: bool = False
    trace_every: int = 0

    def __post_init__(self):
        if self.T < 1 or self.T_tilde < 1:
            raise ValueError("T and T_tilde must be at least 1")
        if not self.gamma0 > 0:
            raise ValueError("gamma0 must be positive")


@dataclass(frozen=True)
class CriticEstimate:
    mu_hat: np.ndarray
    Upsilon_hat: np.ndarray
    p_hat: np.ndarray
    q_hat: np.ndarray
    alpha_hat: np.ndarray
    J_hat: float
    trace: list = field(default_factory=list, repr=False)

    def b_direction(self, policy):
        """Half the intercept gradient, ``Ups22 (-K mu + b) + Ups21 mu + q``."""
        m = self.mu_hat.size
        U = self.Upsilon_hat
        return (U[m:, m:] @ (-policy.K @ self.mu_hat + policy.b) + U[m:, :m] @ self.mu_hat
                + self.q_hat)


def assemble_estimate(alpha_hat, J_hat, mu_hat, policy, trace=None):
    """Recover ``Upsilon``, ``p`` and ``q`` from a learned parameter.

    The linear block equals ``2 (Upsilon z_hat + (p; q))`` for features
    centred at ``z_hat``; see :func:`lqmfg.oracle.q_params`.
    """
    k, m = policy.K.shape
    n = m + k
    ns = svec_dim(n)
    alpha_hat = np.asarray(alpha_hat, dtype=float)
    if alpha_hat.size != ns + n:
        raise DimMismatch(f"alpha has length {alpha_hat.size}, expected {ns + n}")
    U = smat(alpha_hat[:ns])
    lin = 0.5 * alpha_hat[ns:] - U @ centre(policy, mu_hat)
    return CriticEstimate(mu_hat=as_vector(mu_hat), Upsilon_hat=U, p_hat=lin[:m],
                          q_hat=lin[m:], alpha_hat=alpha_hat.copy(), J_hat=float(J_hat),
                          trace=list(trace or []))


def estimate_mean(model, policy, mu, T_tilde, rng, burn_in=1000, start_mode="burn_in",
                  x0=None, noiseless=False):
    """Average of the states ``x_1..x_T~`` along one trajectory."""
    check_stable(model, policy.K)
    if T_tilde < 1:
        raise ValueError("T_tilde must be at least 1")
    if x0 is None:
        x0 = sample_stationary_start(model, policy, mu, rng, burn_in, start_mode)
    traj = rollout(model, policy, mu, x0, T_tilde, rng, noiseless=noiseless)
    return traj.x[1:].mean(axis=0)


@numba.njit(cache=True)
def _project_ball(v, radius):
    nrm = 0.0
    for i in range(v.shape[0]):
        nrm += v[i] * v[i]
    nrm = math.sqrt(nrm)
    if nrm > radius:
        s = radius / nrm
        for i in range(v.shape[0]):
            v[i] *= s


@numba.njit(cache=True)
def _pd_kernel(F, costs, gammas, z1, z2, x1, x2, z1max, z2rad, x1max, x2rad,
               literal, trace_every):
    T = costs.shape[0]
    n = F.shape[1]
    avg2 = np.zeros(n)
    avg1 = 0.0
    wsum = 0.0
    n_trace = T // trace_every if trace_every > 0 else 0
    snaps = np.zeros((n_trace, n))
    nz2 = np.empty(n)
    for t in range(T):
        g = gammas[t]
        c = costs[t]
        d_z = 0.0
        psi_x = 0.0
        d_x = 0.0
        for i in range(n):
            di = F[t, i] - F[t + 1, i]
            d_z += di * z2[i]
            psi_x += F[t, i] * x2[i]
            d_x += di * x2[i]
        delta = z1 + d_z - c
        nz1 = z1 - g * (x1 + psi_x)
        for i in range(n):
            if literal:
                nz2[i] = z2[i] - g * F[t, i] * d_x
            else:
                nz2[i] = z2[i] - g * (F[t, i] - F[t + 1, i]) * psi_x
        nx1 = (1.0 - g) * x1 + g * (z1 - c)
        for i in range(n):
            x2[i] = (1.0 - g) * x2[i] + g * delta * F[t, i]
        z1 = min(max(nz1, 0.0), z1max)
        x1 = min(max(nx1, -x1max), x1max)
        for i in range(n):
            z2[i] = nz2[i]
        _project_ball(z2, z2rad)
        _project_ball(x2, x2rad)
        if not (math.isfinite(z1) and math.isfinite(x1)):
            return avg1, avg2, z1, z2, x1, x2, snaps, t
        wsum += g
        avg1 += g * z1
        for i in range(n):
            avg2[i] += g * z2[i]
        if trace_every > 0 and (t + 1) % trace_every == 0:
            snaps[(t + 1) // trace_every - 1] = z2
    for i in range(n):
        avg2[i] /= wsum
    return avg1 / wsum, avg2, z1, z2, x1, x2, snaps, T


@numba.njit(cache=True)
def _td0_kernel(F, costs, gammas, z1, z2, z1max, z2rad, trace_every):
    T = costs.shape[0]
    n = F.shape[1]
    avg2 = np.zeros(n)
    avg1 = 0.0
    wsum = 0.0
    n_trace = T // trace_every if trace_every > 0 else 0
    snaps = np.zeros((n_trace, n))
    for t in range(T):
        g = gammas[t]
        c = costs[t]
        d_z = 0.0
        for i in range(n):
            d_z += (F[t, i] - F[t + 1, i]) * z2[i]
        delta = z1 + d_z - c
        z1 = min(max((1.0 - g) * z1 + g * c, 0.0), z1max)
        for i in range(n):
            z2[i] -= g * delta * F[t, i]
        _project_ball(z2, z2rad)
        if not math.isfinite(z1) or not math.isfinite(delta):
            return avg1, avg2, z1, z2, snaps, t
        wsum += g
        avg1 += g * z1
        for i in range(n):
            avg2[i] += g * z2[i]
        if trace_every > 0 and (t + 1) % trace_every == 0:
            snaps[(t + 1) // trace_every - 1] = z2
    for i in range(n):
        avg2[i] /= wsum
    return avg1 / wsum, avg2, z1, z2, snaps, T


def stepsizes(gamma0, T):
    return gamma0 / np.sqrt(np.arange(1, T + 1, dtype=float))


def _resolve_sets(model, policy, config):
    if config.projections is not None:
        return config.projections
    if config.J0 is None:
        raise ValueError("critic config needs either projections or J0")
    return default_projection_sets(model, config.J0, policy.K, "theory", C=config.C)


def _sample_phase(model, policy, mu, config, rng):
    check_stable(model, policy.K)
    mu = as_vector(mu)
    mu_hat = estimate_mean(model, policy, mu, config.T_tilde, rng, config.burn_in,
                           config.start_mode)
    x0 = sample_stationary_start(model, policy, mu, rng, config.burn_in, config.start_mode)
    traj = rollout(model, policy, mu, x0, config.T, rng)
    F = np.ascontiguousarray(features(traj.x, traj.u, centre(policy, mu_hat)))
    return mu_hat, F, np.ascontiguousarray(traj.cost[:-1])


def _trace_rows(snaps, every, oracle_alpha):
    rows = []
    for i, z2 in enumerate(snaps):
        row = {"iteration": (i + 1) * every}
        if oracle_alpha is not None:
            row["zeta2_err"] = float(np.linalg.norm(z2 - oracle_alpha))
        rows.append(row)
    return rows


def pd_gtd(model, policy, mu, config, rng, oracle_alpha=None):
    """Primal-dual gradient TD estimate of the action-value parameters."""
    sets = _resolve_sets(model, policy, config)
    mu_hat, F, costs = _sample_phase(model, policy, mu, config, rng)
    n = F.shape[1]
    out = _pd_kernel(F, costs, stepsizes(config.gamma0, config.T),
                     0.5 * sets.zeta1_max, np.zeros(n), 0.0, np.zeros(n),
                     sets.zeta1_max, sets.zeta2_radius, sets.xi1_max, sets.xi2_radius,
                     config.literal_update, config.trace_every)
    J_hat, alpha_hat, _, _, _, _, snaps, done = out
    if done < config.T or not np.all(np.isfinite(alpha_hat)):
        raise NonFinite(f"primal-dual iterate became non-finite at step {done}")
    return assemble_estimate(alpha_hat, J_hat, mu_hat, policy,
                             _trace_rows(snaps, config.trace_every, oracle_alpha))


def td0(model, policy, mu, config, rng, oracle_alpha=None):
    """TD(0) estimate; projects onto the primal set only."""
    sets = _resolve_sets(model, policy, config)
    mu_hat, F, costs = _sample_phase(model, policy, mu, config, rng)
    n = F.shape[1]
    out = _td0_kernel(F, costs, stepsizes(config.gamma0, config.T),
                      0.5 * sets.zeta1_max, np.zeros(n), sets.zeta1_max,
                      sets.zeta2_radius, config.trace_every)
    J_hat, alpha_hat, _, _, snaps, done = out
    if done < config.T or not np.all(np.isfinite(alpha_hat)):
        raise NonFinite(f"TD(0) iterate became non-finite at step {done}")
    return assemble_estimate(alpha_hat, J_hat, mu_hat, policy,
                             _trace_rows(snaps, config.trace_every, oracle_alpha))


@dataclass(frozen=True)
class PdState:
    zeta1: float
    zeta2: np.ndarray
    xi1: float
    xi2: np.ndarray


def expected_pd_step(state, gamma, system, J, literal_update=False, sets=None):
    """One primal-dual update with every sample replaced by its expectation.

    ``system`` is a :class:`lqmfg.oracle.ThetaSystem` built with the exact
    mean, ``J`` the exact average cost.
    """
    Th, Epsi, Ecpsi = system.Theta, system.mean_psi, system.mean_cost_psi
    z1, z2, x1, x2 = state.zeta1, state.zeta2, state.xi1, state.xi2
    dz2 = Th @ x2 if literal_update else Th.T @ x2
    nz1 = z1 - gamma * (x1 + Epsi @ x2)
    nz2 = z2 - gamma * dz2
    nx1 = (1.0 - gamma) * x1 + gamma * (z1 - J)
    nx2 = (1.0 - gamma) * x2 + gamma * (Epsi * z1 + Th @ z2 - Ecpsi)
    if sets is not None:
        nz1 = min(max(nz1, 0.0), sets.zeta1_max)
        nx1 = min(max(nx1, -sets.xi1_max), sets.xi1_max)
        nz2 = _ball(nz2, sets.zeta2_radius)
        nx2 = _ball(nx2, sets.xi2_radius)
    return PdState(float(nz1), nz2, float(nx1), nx2)


def _ball(v, r):
    nrm = np.linalg.norm(v)
    return v * (r / nrm) if nrm > r else v


def exact_critic(model, policy, mu):
    """Oracle-backed estimate with the same interface as the sampled critics."""
    from . import oracle

    qp = oracle.q_params(model, policy, mu)
    J = oracle.expected_cost(model, policy, mu)
    return assemble_estimate(qp.alpha, J, qp.mu_z[:model.m], policy)


__all__ = [
    "CriticConfig", "CriticEstimate", "PdState", "ProjectionSets", "assemble_estimate",
    "centre", "default_projection_sets", "estimate_mean", "exact_critic",
    "expected_pd_step", "feature", "feature_dim", "features", "pd_gtd", "stepsizes", "td0",
]
