"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 a mathematical
precondition fails (no stabilizing Riccati solution, L0 >= 1, unstable
policy), 3 a run diverged.
"""
import hashlib
import json
import logging
import os
import sys
import tempfile

import click
import numpy as np

from . import oracle
from .actor import ActorConfig, natural_actor_critic, write_rows
from .critic import CriticConfig, default_projection_sets, exact_critic, pd_gtd, td0
from .errors import (
    NoConvergence,
    NonFinite,
    NotContraction,
    RiccatiFailure,
    Unstable,
    UnstableIterate,
)
from .linalg import riccati_residual
from .mfg_solver import MfgConfig, solve_mfg
from .model import LinearGaussianPolicy, MfgModel, check_stable, make_rng

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}
log = logging.getLogger("lqmfg")


class ConfigError(Exception):
    pass


def _load_config(path, seeds):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict) or "model" not in cfg:
        raise ConfigError("config must be a JSON object with a 'model' entry")
    model_doc = cfg["model"]
    if isinstance(model_doc, str):
        model_path = os.path.join(os.path.dirname(os.path.abspath(path)), model_doc)
        try:
            with open(model_path) as fh:
                model_doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read model {model_path}: {exc}") from exc
    try:
        model = MfgModel.from_dict(model_doc)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid model: {exc}") from exc
    cfg = dict(cfg, model=model.to_dict())
    if seeds is not None:
        try:
            cfg["seeds"] = [int(s) for s in seeds.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --seeds value {seeds!r}") from exc
    return cfg, model


def _require_seeds(cfg):
    seeds = cfg.get("seeds", [])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("at least one seed is required")
    return [int(s) for s in seeds]


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path, obj):
    _atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_csv(path, rows):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    os.close(fd)
    write_rows(tmp, rows)
    os.replace(tmp, path)


def _section(cfg, key):
    sec = cfg.get(key)
    if not isinstance(sec, dict):
        raise ConfigError(f"config needs a '{key}' object")
    return sec


def _critic_config(sec, model, K):
    try:
        proj = sec.get("projection", {"mode": "theory"})
        mode = proj.get("mode", "theory")
        sets = None
        if mode == "manual":
            sets = default_projection_sets(model, None, K, "manual", radii=proj["radii"])
        elif mode != "theory":
            raise ConfigError(f"unknown projection mode {mode!r}")
        return CriticConfig(T=int(sec["T"]), T_tilde=int(sec["T_tilde"]),
                            gamma0=float(sec.get("gamma0", 0.5)),
                            burn_in=int(sec.get("burn_in", 1000)),
                            start_mode=sec.get("start_mode", "burn_in"),
                            projections=sets, J0=sec.get("J0"),
                            C=float(proj.get("C", 10.0)),
                            literal_update=bool(sec.get("literal_update", False)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid critic section: {exc}") from exc


def _policy(cfg, model, key="policy"):
    sec = cfg.get(key)
    if sec is None:
        return LinearGaussianPolicy.zeros(model)
    try:
        return LinearGaussianPolicy(sec["K"], sec["b"]).check(model)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid {key} section: {exc}") from exc


def _mu(cfg, model, key="mu"):
    mu = np.asarray(cfg.get(key, np.zeros(model.m)), dtype=float).reshape(-1)
    if mu.size != model.m:
        raise ConfigError(f"'{key}' must have length {model.m}")
    return mu


def _actor_config(sec, model, K, exact_critic_flag):
    try:
        kind = "exact" if exact_critic_flag else sec.get("critic", "exact")
        ck = cb = None
        if kind != "exact":
            ck = _critic_config(sec["critic_k"], model, K)
            cb = _critic_config(sec.get("critic_b", sec["critic_k"]), model, K)
        return ActorConfig(N=int(sec["N"]), H=int(sec["H"]), gamma=float(sec["gamma"]),
                           gamma_b=float(sec["gamma_b"]), critic=kind, critic_k=ck,
                           critic_b=cb, safeguard=sec.get("safeguard", "reject-unstable"),
                           final_T_tilde=sec.get("final_T_tilde"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid actor section: {exc}") from exc


def _tag(rows, chash, seed):
    return [dict(row, config_hash=chash, seed=seed) for row in rows]


def _quantiles(values):
    q = np.quantile(np.asarray(values, dtype=float), [0.25, 0.5, 0.75])
    return {"q25": float(q[0]), "median": float(q[1]), "q75": float(q[2])}


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def cli():
    """Learn and verify equilibria of linear-quadratic mean-field games."""


def _common(f):
    f = click.option("--seeds", default=None, help='Comma-separated seeds, e.g. "1,2,3".')(f)
    f = click.option("--out", "out", required=True, type=click.Path(file_okay=False))(f)
    f = click.option("--config", "config", required=True, type=click.Path(dir_okay=False))(f)
    return f


@cli.command("solve-exact")
@_common
def solve_exact(config, out, seeds):
    """Exact Nash equilibrium by fixed-point iteration."""
    cfg, model = _load_config(config, seeds)
    chash = config_hash(cfg)
    diag = oracle.contraction_constants(model)
    X = oracle.riccati_solution(model)[0]
    mu0 = _mu(cfg, model, "mu0")
    mu_star, pi_star = oracle.exact_nash(model, mu0, tol=float(cfg.get("tol", 1e-12)))
    result = {
        "config_hash": chash,
        "mu_star": mu_star.tolist(),
        "K_star": pi_star.K.tolist(),
        "b_star": pi_star.b.tolist(),
        "L0": diag.L0, "L1": diag.L1, "L2": diag.L2, "L3": diag.L3,
        "riccati_residual": float(np.linalg.norm(riccati_residual(X, model.A, model.B,
                                                                  model.Q, model.R))),
        "fixedpoint_residual": float(np.linalg.norm(oracle.lambda_op(model, mu_star) - mu_star)),
    }
    _write_json(os.path.join(out, "nash.json"), result)
    click.echo(f"mu_star = {mu_star.tolist()}  L0 = {diag.L0:.6g}")


@cli.command("eval-critic")
@_common
@click.option("--exact-critic", "exact_critic_flag", is_flag=True,
              help="Use the oracle estimate instead of samples (smoke test).")
def eval_critic(config, out, seeds, exact_critic_flag):
    """Benchmark a critic against the exact action-value parameters."""
    cfg, model = _load_config(config, seeds)
    seed_list = _require_seeds(cfg)
    chash = config_hash(cfg)
    policy, mu = _policy(cfg, model), _mu(cfg, model)
    check_stable(model, policy.K)
    sec = _section(cfg, "critic")
    algo = sec.get("algorithm", "pd_gtd")
    if algo not in ("pd_gtd", "td0"):
        raise ConfigError(f"unknown critic algorithm {algo!r}")
    T_list = sec.get("T_list", [sec.get("T")])
    qp = oracle.q_params(model, policy, mu)
    J = oracle.expected_cost(model, policy, mu)
    mu_Kb = qp.mu_z[:model.m]
    rows = []
    for seed in seed_list:
        for T in T_list:
            if exact_critic_flag:
                est = exact_critic(model, policy, mu)
            else:
                ccfg = _critic_config(dict(sec, T=T), model, policy.K)
                run = pd_gtd if algo == "pd_gtd" else td0
                est = run(model, policy, mu, ccfg, make_rng(seed))
            rows.append({
                "seed": seed, "T": int(T),
                "Upsilon_err": float(np.linalg.norm(est.Upsilon_hat - qp.Upsilon)
                                     / np.linalg.norm(qp.Upsilon)),
                "q_err": float(np.linalg.norm(est.q_hat - qp.q)),
                "mu_err": float(np.linalg.norm(est.mu_hat - mu_Kb)),
                "J_err": float(abs(est.J_hat - J)),
                "config_hash": chash,
            })
    _write_csv(os.path.join(out, "critic_bench.csv"), rows)
    for T in T_list:
        med = np.median([r["Upsilon_err"] for r in rows if r["T"] == int(T)])
        click.echo(f"T = {T}: median Upsilon_err = {med:.4g}")


@cli.command("run-actor")
@_common
@click.option("--exact-critic", "exact_critic_flag", is_flag=True,
              help="Replace the sampled critic by the oracle.")
def run_actor(config, out, seeds, exact_critic_flag):
    """Natural actor-critic at a fixed mean field."""
    cfg, model = _load_config(config, seeds)
    seed_list = _require_seeds(cfg)
    chash = config_hash(cfg)
    policy0, mu = _policy(cfg, model, "policy0"), _mu(cfg, model)
    check_stable(model, policy0.K)
    acfg = _actor_config(_section(cfg, "actor"), model, policy0.K, exact_critic_flag)
    K_star = oracle.optimal_gain(model)
    best = oracle.lambda1(model, mu)
    J_best = oracle.expected_cost(model, best, mu)
    summary = {"config_hash": chash, "runs": []}
    for seed in seed_list:
        policy, mu_hat, trace = natural_actor_critic(model, mu, policy0, acfg, make_rng(seed),
                                                     oracle_diagnostics=True)
        _write_csv(os.path.join(out, f"actor_trace_seed{seed}.csv"), _tag(trace.rows, chash, seed))
        summary["runs"].append({
            "seed": seed, "K": policy.K.tolist(), "b": policy.b.tolist(),
            "mu_hat": mu_hat.tolist(), "steps": trace.steps,
            "K_err": float(np.linalg.norm(policy.K - K_star)),
            "b_err": float(np.linalg.norm(policy.b - best.b)),
            "J_gap": float(oracle.expected_cost(model, policy, mu) - J_best),
        })
    _write_json(os.path.join(out, "actor_summary.json"), summary)
    click.echo(f"{len(seed_list)} actor runs written to {out}")


@cli.command("run-mfg")
@_common
@click.option("--exact-critic", "exact_critic_flag", is_flag=True,
              help="Replace the sampled critic by the oracle.")
@click.option("--exact-mean", "exact_mean_flag", is_flag=True,
              help="Update the mean field with the exact induced mean.")
def run_mfg(config, out, seeds, exact_critic_flag, exact_mean_flag):
    """Full mean-field actor-critic."""
    cfg, model = _load_config(config, seeds)
    seed_list = _require_seeds(cfg)
    chash = config_hash(cfg)
    sec = _section(cfg, "mfg")
    policy0 = _policy(cfg, model, "policy0")
    check_stable(model, policy0.K)
    acfg = _actor_config(_section(cfg, "actor"), model, policy0.K, exact_critic_flag)
    try:
        mcfg = MfgConfig(S=int(sec["S"]), mu0=_mu(sec, model, "mu0"), actor=acfg,
                         growth=float(sec.get("growth", 1.5)),
                         mean_update="exact" if exact_mean_flag else sec.get("mean_update", "sampled"),
                         policy_mode=sec.get("policy_mode", "actor"),
                         oracle_diagnostics=True, policy0=policy0)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid mfg section: {exc}") from exc
    per_s = {}
    runs = []
    for seed in seed_list:
        policy, mu, trace = solve_mfg(model, mcfg, make_rng(seed))
        _write_csv(os.path.join(out, f"mfg_trace_seed{seed}.csv"), _tag(trace.rows, chash, seed))
        for row in trace.rows:
            per_s.setdefault(row["s"], []).append(row["mu_err"])
        runs.append({"seed": seed, "mu": mu.tolist(), "K": policy.K.tolist(),
                     "b": policy.b.tolist(), "steps": trace.steps,
                     "mu_err": trace.rows[-1]["mu_err"], "warnings": trace.warnings})
    summary = {"config_hash": chash, "mu_star": trace.mu_star.tolist(),
               "mu_err_by_s": {str(s): _quantiles(v) for s, v in sorted(per_s.items())},
               "runs": runs}
    _write_json(os.path.join(out, "summary.json"), summary)
    click.echo(f"median final mu_err = {summary['mu_err_by_s'][str(mcfg.S)]['median']:.4g}")


def _exit_code(exc):
    if isinstance(exc, (click.UsageError, ConfigError)):
        return 1
    if isinstance(exc, (UnstableIterate, NonFinite)):
        return 3
    if isinstance(exc, (RiccatiFailure, NotContraction, Unstable)):
        return 2
    if isinstance(exc, NoConvergence):
        return 3
    return None


def main(argv=None):
    level = os.environ.get("MFG_LOG_LEVEL", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cli.main(args=argv, prog_name="lqmfg", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        return 1
    except Exception as exc:  # noqa: BLE001
        code = _exit_code(exc)
        if code is None:
            raise
        if isinstance(exc, click.UsageError):
            click.echo(exc.format_message() if not exc.ctx else exc.ctx.get_usage() + "\n"
                       + exc.format_message(), err=True)
            if exc.ctx is None:
                click.echo(cli.get_usage(click.Context(cli, info_name="lqmfg")), err=True)
        else:
            click.echo(f"error: {exc}", err=True)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
