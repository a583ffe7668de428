"""Natural actor-critic for the drifted LQR with a frozen mean field.

A K-loop of natural-gradient steps on the gain is followed by a b-loop of
gradient steps on the intercept at the final gain. Each step queries a
critic, which is either sampled (PD-GTD or TD(0)) or exact.
"""
from dataclasses import dataclass, field, replace
import csv
import logging

import numpy as np

from . import critic as _critic
from . import oracle
from .errors import DimMismatch, UnstableIterate
from .linalg import STAB_MARGIN, as_vector, spectral_radius
from .model import LinearGaussianPolicy, check_stable, closed_loop

log = logging.getLogger(__name__)

CRITICS = ("exact", "pd_gtd", "td0")
SAFEGUARDS = ("none", "reject-unstable")
MAX_HALVINGS = 10


@dataclass(frozen=True)
class ActorConfig:
    """Iteration counts, stepsizes and critic choice.

    ``critic_k`` and ``critic_b`` are the sampled-critic budgets used in the
    K-loop and b-loop; they are ignored when ``critic == "exact"``.
    ``final_T_tilde`` is the length of the closing mean-estimation run
    (defaults to ``critic_b.T_tilde``).
    """

    N: int
    H: int
    gamma: float
    gamma_b: float
    critic: str = "exact"
    critic_k: _critic.CriticConfig | None = None
    critic_b: _critic.CriticConfig | None = None
    safeguard: str = "reject-unstable"
    final_T_tilde: int | None = None

    def __post_init__(self):
        if self.N < 0 or self.H < 0:
            raise ValueError("N and H must be nonnegative")
        if not (self.gamma > 0 and self.gamma_b > 0):
            raise ValueError("gamma and gamma_b must be positive")
        if self.critic not in CRITICS:
            raise ValueError(f"critic must be one of {CRITICS}")
        if self.safeguard not in SAFEGUARDS:
            raise ValueError(f"safeguard must be one of {SAFEGUARDS}")
        if self.critic != "exact" and (self.critic_k is None or self.critic_b is None):
            raise ValueError("sampled critics need critic_k and critic_b budgets")

    def scaled(self, factor):
        """Copy with every sampled budget multiplied by ``factor``."""
        def grow(cfg):
            if cfg is None:
                return None
            return replace(cfg, T=max(1, int(round(cfg.T * factor))),
                           T_tilde=max(1, int(round(cfg.T_tilde * factor))))
        final = None if self.final_T_tilde is None else max(1, int(round(self.final_T_tilde * factor)))
        return replace(self, critic_k=grow(self.critic_k), critic_b=grow(self.critic_b),
                       final_T_tilde=final)


@dataclass
class ActorTrace:
    rows: list = field(default_factory=list)
    steps: int = 0

    def __len__(self):
        return len(self.rows)

    def write_csv(self, path):
        write_rows(path, self.rows)


def write_rows(path, rows):
    keys = []
    for row in rows:
        keys.extend(key for key in row if key not in keys)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _fmt(val) for key, val in row.items()})


def _fmt(val):
    if isinstance(val, float):
        return repr(val)
    return val


def natural_k_step(K, Upsilon_hat, gamma):
    K = np.atleast_2d(np.asarray(K, dtype=float))
    k, m = K.shape
    if Upsilon_hat.shape != (m + k, m + k):
        raise DimMismatch(f"Upsilon has shape {Upsilon_hat.shape}, expected {(m + k, m + k)}")
    U22, U21 = Upsilon_hat[m:, m:], Upsilon_hat[m:, :m]
    return K - gamma * (U22 @ K - U21)


def b_step(K, b, estimate, gamma_b):
    K = np.atleast_2d(np.asarray(K, dtype=float))
    b = as_vector(b)
    if b.size != K.shape[0] or estimate.mu_hat.size != K.shape[1]:
        raise DimMismatch("intercept, gain and critic estimate dimensions disagree")
    return b - gamma_b * estimate.b_direction(LinearGaussianPolicy(K, b))


def gamma_bound(model, policy0, mu):
    """Largest K-stepsize admitted by the convergence theorem."""
    J0 = oracle.expected_cost(model, policy0, mu)
    s_eps = float(np.linalg.eigvalsh(oracle.effective_noise_cov(model)).min())
    return 1.0 / (np.linalg.norm(model.R, 2) + np.linalg.norm(model.B, 2) ** 2 * J0 / s_eps)


def k_rate_bound(model, gamma):
    """Per-step contraction factor of the J1 gap for stepsize ``gamma``."""
    s_eps = float(np.linalg.eigvalsh(oracle.effective_noise_cov(model)).min())
    s_R = float(np.linalg.eigvalsh(model.R).min())
    Phi_star = oracle.stationary_cov(model, oracle.optimal_gain(model))
    return 1.0 - gamma * s_eps * s_R / np.linalg.norm(Phi_star, 2)


def _critic_steps(cfg):
    return 2 * cfg.burn_in + cfg.T_tilde + cfg.T


def _evaluate(model, policy, mu, kind, cfg, rng, trace):
    if kind == "exact":
        return _critic.exact_critic(model, policy, mu)
    trace.steps += _critic_steps(cfg)
    run = _critic.pd_gtd if kind == "pd_gtd" else _critic.td0
    return run(model, policy, mu, cfg, rng)


def _guarded_k_step(model, K, est, gamma, safeguard, n):
    step = gamma
    for attempt in range(MAX_HALVINGS + 1):
        K_next = natural_k_step(K, est.Upsilon_hat, step)
        rho = spectral_radius(closed_loop(model, K_next))
        if rho < 1.0 - STAB_MARGIN:
            if attempt:
                log.info("K step %d accepted after %d halvings", n, attempt)
            return K_next, rho
        if safeguard == "none":
            break
        step *= 0.5
    raise UnstableIterate(f"K iterate {n + 1} is not stabilizing (rho = {rho:.6g})",
                          phase="K", iteration=n + 1, rho=rho)


def natural_actor_critic(model, mu, policy0, config, rng, oracle_diagnostics=False):
    """Run the K-loop then the b-loop.

    Returns ``(policy, mu_hat, trace)`` where ``mu_hat`` estimates the
    stationary mean of the returned policy.
    """
    mu = as_vector(mu)
    policy0.check(model)
    check_stable(model, policy0.K)
    trace = ActorTrace()
    K, b0 = policy0.K.copy(), policy0.b.copy()
    if oracle_diagnostics:
        K_star = oracle.optimal_gain(model)
        J1_star = oracle.J1(model, K_star)

    for n in range(config.N):
        est = _evaluate(model, LinearGaussianPolicy(K, b0), mu, config.critic, config.critic_k,
                        rng, trace)
        K, rho = _guarded_k_step(model, K, est, config.gamma, config.safeguard, n)
        row = {"phase": "K", "iter": n + 1, "rho": rho}
        if oracle_diagnostics:
            row["J1_gap"] = oracle.J1(model, K) - J1_star
            row["K_err"] = float(np.linalg.norm(K - K_star))
        trace.rows.append(row)

    b = b0
    if oracle_diagnostics:
        b_opt = oracle.optimal_b(model, K, mu)
        J2_opt = oracle.optimal_J2(model, mu)
    rho = spectral_radius(closed_loop(model, K))
    for h in range(config.H):
        est = _evaluate(model, LinearGaussianPolicy(K, b), mu, config.critic, config.critic_b,
                        rng, trace)
        b = b_step(K, b, est, config.gamma_b)
        row = {"phase": "b", "iter": h + 1, "rho": rho}
        if oracle_diagnostics:
            row["J2_gap"] = oracle.J2(model, LinearGaussianPolicy(K, b), mu) - J2_opt
            row["b_err"] = float(np.linalg.norm(b - b_opt))
        trace.rows.append(row)

    policy = LinearGaussianPolicy(K, b)
    if config.critic == "exact":
        mu_hat = oracle.stationary_mean(model, policy, mu)
    else:
        cfg = config.critic_b
        T_tilde = config.final_T_tilde or cfg.T_tilde
        trace.steps += cfg.burn_in + T_tilde
        mu_hat = _critic.estimate_mean(model, policy, mu, T_tilde, rng, cfg.burn_in,
                                       cfg.start_mode)
    return policy, mu_hat, trace
