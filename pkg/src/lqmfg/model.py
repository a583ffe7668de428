"""Game definition, linear-Gaussian policies and a seeded simulator.

The simulator realises the infinite-population limit: the mean-field state
``mu`` is frozen while a single representative agent evolves as

    x' = A x + B u + A_bar mu + d + omega,   u = -K x + b + sigma * eta,

with ``omega ~ N(0, Psi_omega)`` and ``eta ~ N(0, I_k)``.
"""
from dataclasses import dataclass, field
import json

import numba
import numpy as np

from .errors import CholeskyFailure, DimMismatch, Unstable
from .linalg import STAB_MARGIN, as_matrix, as_vector, spectral_radius

MODEL_KEYS = ("A", "B", "A_bar", "d", "Q", "R", "Q_bar", "Psi_omega", "sigma")


def _min_eig(M):
    return float(np.min(np.linalg.eigvalsh(0.5 * (M + M.T))))


@dataclass(frozen=True, eq=False)
class MfgModel:
    """Linear-quadratic mean-field game in the infinite-population limit.

    Parameters
    ----------
    A, B, A_bar : array_like
        Dynamics ``(m, m)``, input ``(m, k)`` and mean-field coupling ``(m, m)``.
    d : array_like
        Drift, length ``m``.
    Q, R, Q_bar : array_like
        State (SPD), action (SPD) and mean-field (PSD) cost matrices.
    Psi_omega : array_like
        State noise covariance (SPD).
    sigma : float
        Exploration scale of the policy class.
    """

    A: np.ndarray
    B: np.ndarray
    A_bar: np.ndarray
    d: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Q_bar: np.ndarray
    Psi_omega: np.ndarray
    sigma: float
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        conv = object.__setattr__
        for name in ("A", "B", "A_bar", "Q", "R", "Q_bar", "Psi_omega"):
            conv(self, name, as_matrix(getattr(self, name), name))
        conv(self, "d", as_vector(self.d, "d"))
        conv(self, "sigma", float(self.sigma))
        m, k = self.B.shape
        expect = {"A": (m, m), "A_bar": (m, m), "Q": (m, m), "R": (k, k),
                  "Q_bar": (m, m), "Psi_omega": (m, m)}
        for name, shape in expect.items():
            if getattr(self, name).shape != shape:
                raise DimMismatch(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if self.d.shape != (m,):
            raise DimMismatch(f"d has length {self.d.size}, expected {m}")
        for name in ("Q", "R", "Q_bar", "Psi_omega"):
            M = getattr(self, name)
            if not np.allclose(M, M.T, atol=1e-12, rtol=1e-10):
                raise ValueError(f"{name} must be symmetric")
        for name in ("Q", "R", "Psi_omega"):
            if _min_eig(getattr(self, name)) <= 0.0:
                raise ValueError(f"{name} must be positive definite")
        if _min_eig(self.Q_bar) < -1e-12:
            raise ValueError("Q_bar must be positive semidefinite")
        if not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ValueError("sigma must be a positive finite number")

    @property
    def m(self):
        return self.B.shape[0]

    @property
    def k(self):
        return self.B.shape[1]

    def noise_factor(self):
        """Lower Cholesky factor of ``Psi_omega``."""
        if "chol" not in self._cache:
            try:
                self._cache["chol"] = np.linalg.cholesky(self.Psi_omega)
            except np.linalg.LinAlgError as exc:
                raise CholeskyFailure("Psi_omega is not numerically SPD") from exc
        return self._cache["chol"]

    def replace(self, **changes):
        data = {key: getattr(self, key) for key in MODEL_KEYS}
        data.update(changes)
        return MfgModel(**data)

    def to_dict(self):
        out = {}
        for key in MODEL_KEYS:
            val = getattr(self, key)
            out[key] = val.tolist() if isinstance(val, np.ndarray) else val
        return out

    @classmethod
    def from_dict(cls, data):
        missing = [key for key in MODEL_KEYS if key not in data]
        if missing:
            raise KeyError(f"model document is missing keys: {missing}")
        unknown = sorted(set(data) - set(MODEL_KEYS))
        if unknown:
            raise KeyError(f"unknown model keys: {unknown}")
        return cls(**{key: data[key] for key in MODEL_KEYS})


def load_model(path):
    with open(path) as fh:
        return MfgModel.from_dict(json.load(fh))


def scalar_reference_model():
    """Canonical m = k = 1 instance used throughout the tests."""
    return MfgModel(A=0.5, B=1.0, A_bar=0.2, d=0.1, Q=1.0, R=1.0, Q_bar=0.5,
                    Psi_omega=0.04, sigma=0.1)


@dataclass(frozen=True, eq=False)
class LinearGaussianPolicy:
    """Policy ``u = -K x + b + sigma * eta``; ``sigma`` lives on the model."""

    K: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "K", as_matrix(self.K, "K"))
        object.__setattr__(self, "b", as_vector(self.b, "b"))
        if self.K.shape[0] != self.b.size:
            raise DimMismatch(f"K has {self.K.shape[0]} rows but b has length {self.b.size}")

    def check(self, model):
        if self.K.shape != (model.k, model.m):
            raise DimMismatch(f"K has shape {self.K.shape}, expected {(model.k, model.m)}")
        return self

    def to_dict(self):
        return {"K": self.K.tolist(), "b": self.b.tolist()}

    @classmethod
    def zeros(cls, model):
        return cls(np.zeros((model.k, model.m)), np.zeros(model.k))


@dataclass(frozen=True)
class Transition:
    x: np.ndarray
    u: np.ndarray
    cost: float
    x_next: np.ndarray


def make_rng(seed):
    """Counter-based generator; the only randomness source used by the library."""
    return np.random.Generator(np.random.Philox(int(seed)))


def closed_loop(model, K):
    return model.A - model.B @ np.asarray(K)


def check_stable(model, K, stab_margin=STAB_MARGIN):
    rho = spectral_radius(closed_loop(model, K))
    if rho >= 1.0 - stab_margin:
        raise Unstable(f"rho(A - BK) = {rho:.6g} is not below 1 - {stab_margin:g}")
    return rho


def cost_of(model, x, u, mu):
    x, u, mu = as_vector(x), as_vector(u), as_vector(mu)
    if x.size != model.m or mu.size != model.m or u.size != model.k:
        raise DimMismatch("state, action or mean-field dimension mismatch")
    return float(x @ model.Q @ x + u @ model.R @ u + mu @ model.Q_bar @ mu)


def step(model, policy, mu, x, rng, eta=None, omega=None):
    """Advance the representative agent by one step.

    ``eta`` and ``omega`` override the sampled exploration and state noise;
    passing zeros gives the noiseless dynamics.
    """
    x, mu = as_vector(x), as_vector(mu)
    policy.check(model)
    if x.size != model.m or mu.size != model.m:
        raise DimMismatch("state or mean-field dimension mismatch")
    if eta is None:
        eta = rng.standard_normal(model.k)
    if omega is None:
        omega = model.noise_factor() @ rng.standard_normal(model.m)
    u = -policy.K @ x + policy.b + model.sigma * np.asarray(eta, dtype=float)
    x_next = model.A @ x + model.B @ u + model.A_bar @ mu + model.d + np.asarray(omega, dtype=float)
    return Transition(x=x, u=u, cost=cost_of(model, x, u, mu), x_next=x_next)


@numba.njit(cache=True)
def _affine_recursion(F, c, noise, x0):
    T = noise.shape[0]
    m = x0.shape[0]
    xs = np.empty((T + 1, m))
    xs[0] = x0
    for t in range(T):
        for i in range(m):
            acc = c[i] + noise[t, i]
            for j in range(m):
                acc += F[i, j] * xs[t, j]
            xs[t + 1, i] = acc
    return xs


@dataclass(frozen=True)
class Trajectory:
    """States ``x_0..x_T``, actions ``u_0..u_T`` and costs ``c_0..c_T``."""

    x: np.ndarray
    u: np.ndarray
    cost: np.ndarray


def rollout(model, policy, mu, x0, T, rng, noiseless=False):
    """Simulate ``T`` transitions from ``x0``.

    Noise is drawn in blocks (all exploration draws, then all state-noise
    draws), so the stream differs from repeated :func:`step` calls but is
    equally deterministic given the generator state. ``noiseless`` zeroes
    both noise sources without touching ``rng``.
    """
    policy.check(model)
    mu = as_vector(mu)
    x0 = as_vector(x0)
    T = int(T)
    if T < 0:
        raise ValueError("T must be nonnegative")
    if noiseless:
        eta = np.zeros((T + 1, model.k))
        omega = np.zeros((T, model.m))
    else:
        eta = rng.standard_normal((T + 1, model.k))
        omega = rng.standard_normal((T, model.m)) @ model.noise_factor().T
    F = closed_loop(model, policy.K)
    c = model.B @ policy.b + model.A_bar @ mu + model.d
    noise = model.sigma * eta[:T] @ model.B.T + omega
    xs = _affine_recursion(F, c, np.ascontiguousarray(noise), x0.copy())
    us = -xs @ policy.K.T + policy.b + model.sigma * eta
    costs = (np.einsum("ti,ij,tj->t", xs, model.Q, xs)
             + np.einsum("ti,ij,tj->t", us, model.R, us)
             + float(mu @ model.Q_bar @ mu))
    return Trajectory(x=xs, u=us, cost=costs)


def sample_stationary_start(model, policy, mu, rng, burn_in=1000, mode="burn_in"):
    """Starting state for a policy-evaluation run.

    ``mode="burn_in"`` runs ``burn_in`` steps from the origin (model-free);
    ``mode="oracle"`` draws exactly from the stationary Gaussian.
    """
    check_stable(model, policy.K)
    mu = as_vector(mu)
    if mode == "oracle":
        from . import oracle

        mean = oracle.stationary_mean(model, policy, mu)
        cov = oracle.stationary_cov(model, policy.K)
        return mean + np.linalg.cholesky(cov) @ rng.standard_normal(model.m)
    if mode != "burn_in":
        raise ValueError(f"unknown start mode {mode!r}")
    if burn_in == 0:
        return np.zeros(model.m)
    return rollout(model, policy, mu, np.zeros(model.m), burn_in, rng).x[-1]
