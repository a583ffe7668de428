"""Outer mean-field loop: optimise the policy, then move the mean field."""
from dataclasses import dataclass, field
import logging

import numpy as np

from . import oracle
from .actor import ActorConfig, natural_actor_critic, write_rows
from .errors import NotContraction
from .linalg import as_vector
from .model import LinearGaussianPolicy

log = logging.getLogger(__name__)

MEAN_UPDATES = ("sampled", "exact")
POLICY_MODES = ("actor", "oracle")


@dataclass(frozen=True)
class MfgConfig:
    """Outer-loop settings.

    Round ``s`` (counting from 0) runs the actor with every sampled budget
    multiplied by ``growth**s``. ``policy_mode="oracle"`` replaces the actor
    by the exact best response.
    """

    S: int
    mu0: np.ndarray
    actor: ActorConfig
    growth: float = 1.5
    mean_update: str = "sampled"
    policy_mode: str = "actor"
    oracle_diagnostics: bool = True
    policy0: LinearGaussianPolicy | None = None

    def __post_init__(self):
        object.__setattr__(self, "mu0", as_vector(self.mu0))
        if self.S < 1:
            raise ValueError("S must be at least 1")
        if not self.growth > 0:
            raise ValueError("growth must be positive")
        if self.mean_update not in MEAN_UPDATES:
            raise ValueError(f"mean_update must be one of {MEAN_UPDATES}")
        if self.policy_mode not in POLICY_MODES:
            raise ValueError(f"policy_mode must be one of {POLICY_MODES}")


@dataclass
class MfgTrace:
    rows: list = field(default_factory=list)
    steps: int = 0
    warnings: list = field(default_factory=list)
    mu_star: np.ndarray | None = None

    def __len__(self):
        return len(self.rows)

    def write_csv(self, path):
        write_rows(path, self.rows)


def mean_field_update(mu_hat, mu=None, policy=None, model=None, exact=False):
    """Next mean-field state: the actor's estimate, or the exact induced mean."""
    if exact:
        return oracle.lambda2(model, mu, policy)
    return as_vector(mu_hat).copy()


def _record(s, mu, policy, model, nash, steps):
    row = {"s": s}
    for i, val in enumerate(mu):
        row[f"mu_{i}"] = float(val)
    if nash is not None:
        mu_star, pi_star = nash
        row["mu_err"] = float(np.linalg.norm(mu - mu_star))
        if policy is not None:
            row["K_err"] = float(np.linalg.norm(policy.K - pi_star.K))
            row["b_err"] = float(np.linalg.norm(policy.b - pi_star.b))
            best = oracle.lambda1(model, mu)
            row["J_gap"] = (oracle.expected_cost(model, policy, mu)
                            - oracle.expected_cost(model, best, mu))
    row["steps"] = steps
    return row


def solve_mfg(model, config, rng):
    """Alternate policy optimisation and mean-field updates for ``S`` rounds.

    Returns ``(policy_S, mu_S, trace)``; the trace has ``S + 1`` rows.
    """
    trace = MfgTrace()
    diag = oracle.contraction_constants(model)
    if diag.L0 >= 1.0:
        msg = f"L0 = {diag.L0:.6g} >= 1; the mean-field map may not contract"
        log.warning(msg)
        trace.warnings.append(msg)
    nash = None
    if config.oracle_diagnostics:
        try:
            nash = oracle.exact_nash(model, config.mu0)
            trace.mu_star = nash[0]
        except NotContraction:
            pass

    policy = config.policy0 or LinearGaussianPolicy.zeros(model)
    mu = config.mu0.copy()
    trace.rows.append(_record(0, mu, None, model, nash, 0))
    for s in range(config.S):
        if config.policy_mode == "oracle":
            policy = oracle.lambda1(model, mu)
            mu_hat = oracle.stationary_mean(model, policy, mu)
        else:
            actor_cfg = config.actor.scaled(config.growth**s)
            policy, mu_hat, atrace = natural_actor_critic(model, mu, policy, actor_cfg, rng)
            trace.steps += atrace.steps
        mu = mean_field_update(mu_hat, mu, policy, model, exact=config.mean_update == "exact")
        trace.rows.append(_record(s + 1, mu, policy, model, nash, trace.steps))
        log.info("round %d: mu = %s", s + 1, np.array2string(mu))
    return policy, mu, trace
