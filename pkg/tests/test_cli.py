import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from lqmfg.cli import main
from lqmfg.model import scalar_reference_model

SCALAR = scalar_reference_model().to_dict()


def _write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(obj if isinstance(obj, str) else json.dumps(obj))
    return str(path)


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_solve_exact(tmp_path):
    cfg = _write(tmp_path, "c.json", {"model": SCALAR, "mu0": [0.0]})
    assert main(["solve-exact", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    out = json.loads((tmp_path / "o" / "nash.json").read_text())
    assert out["fixedpoint_residual"] < 1e-10
    assert out["mu_star"][0] == pytest.approx(0.04 / 0.92, abs=1e-10)
    assert out["L0"] == out["L1"] * out["L3"] + out["L2"]
    assert len(out["config_hash"]) == 16


def test_solve_exact_zero_drift(tmp_path):
    cfg = _write(tmp_path, "c.json", {"model": dict(SCALAR, d=[0.0])})
    assert main(["solve-exact", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "nash.json").read_text())["mu_star"] == [0.0]


def test_model_from_relative_path(tmp_path):
    _write(tmp_path, "model.json", SCALAR)
    cfg = _write(tmp_path, "c.json", {"model": "model.json"})
    assert main(["solve-exact", "--config", cfg, "--out", str(tmp_path / "o")]) == 0


def test_config_errors(tmp_path, capsys):
    bad = _write(tmp_path, "bad.json", "{not json")
    assert main(["solve-exact", "--config", bad, "--out", str(tmp_path)]) == 1
    assert "cannot read config" in capsys.readouterr().err
    missing = _write(tmp_path, "m.json", {"model": {"A": [[1.0]]}})
    assert main(["solve-exact", "--config", missing, "--out", str(tmp_path)]) == 1
    assert main(["no-such-command"]) == 1
    assert "Usage" in capsys.readouterr().err


def test_non_contraction_exit_code(tmp_path):
    cfg = _write(tmp_path, "c.json", {"model": dict(SCALAR, A_bar=[[0.9]])})
    assert main(["solve-exact", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def _critic_cfg(**kw):
    sec = {"algorithm": "td0", "T_list": [1000, 10000, 100000], "T_tilde": 10000,
           "gamma0": 20.0, "J0": 0.2, "burn_in": 500}
    sec.update(kw)
    return {"model": SCALAR, "seeds": [0, 1, 2], "policy": {"K": [[0.0]], "b": [0.0]},
            "mu": [0.0], "critic": sec}


def test_eval_critic_sweep(tmp_path):
    cfg = _write(tmp_path, "c.json", _critic_cfg())
    assert main(["eval-critic", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = _read_csv(tmp_path / "o" / "critic_bench.csv")
    assert len(rows) == 9
    med = [np.median([float(r["Upsilon_err"]) for r in rows if int(r["T"]) == T]) for T in (1000, 10000, 100000)]
    assert med[0] > med[1] > med[2]
    assert all(r["config_hash"] == rows[0]["config_hash"] for r in rows)


def test_eval_critic_exact_smoke(tmp_path):
    cfg = _write(tmp_path, "c.json", _critic_cfg(T_list=[1000]))
    assert main(["eval-critic", "--config", cfg, "--out", str(tmp_path / "o"), "--exact-critic"]) == 0
    for row in _read_csv(tmp_path / "o" / "critic_bench.csv"):
        for key in ("Upsilon_err", "q_err", "mu_err", "J_err"):
            assert float(row[key]) < 1e-8


def test_eval_critic_seed_and_stability_errors(tmp_path):
    cfg = _write(tmp_path, "c.json", _critic_cfg())
    assert main(["eval-critic", "--config", cfg, "--out", str(tmp_path / "o"), "--seeds", ""]) == 1
    unstable = dict(_critic_cfg(), policy={"K": [[-1.0]], "b": [0.0]})
    cfg2 = _write(tmp_path, "u.json", unstable)
    assert main(["eval-critic", "--config", cfg2, "--out", str(tmp_path / "o")]) == 2


def test_run_actor_exact_and_divergence(tmp_path):
    base = {"model": SCALAR, "seeds": [0], "mu": [0.0],
            "actor": {"N": 100, "H": 100, "gamma": 0.3, "gamma_b": 0.3}}
    cfg = _write(tmp_path, "a.json", base)
    assert main(["run-actor", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    summary = json.loads((tmp_path / "o" / "actor_summary.json").read_text())
    assert summary["runs"][0]["K_err"] < 1e-8
    assert (tmp_path / "o" / "actor_trace_seed0.csv").exists()
    wild = dict(base, actor={"N": 3, "H": 0, "gamma": 5.0, "gamma_b": 0.3, "safeguard": "none"})
    cfg2 = _write(tmp_path, "w.json", wild)
    assert main(["run-actor", "--config", cfg2, "--out", str(tmp_path / "o2")]) == 3


def _mfg_cfg():
    ck = {"T": 4000, "T_tilde": 400, "gamma0": 20.0, "J0": 1.0, "burn_in": 100}
    return {"model": SCALAR, "seeds": [0, 1],
            "actor": {"N": 2, "H": 2, "gamma": 0.3, "gamma_b": 0.3, "critic": "td0", "critic_k": ck},
            "mfg": {"S": 3, "mu0": [0.0], "growth": 1.5}}


def test_run_mfg_exact_mode_decays(tmp_path):
    base = _mfg_cfg()
    base["actor"] = dict(base["actor"], N=200, H=200)
    cfg = _write(tmp_path, "m.json", dict(base, mfg={"S": 5, "mu0": [1.0]}))
    code = main(["run-mfg", "--config", cfg, "--out", str(tmp_path / "o"), "--exact-critic",
                 "--exact-mean", "--seeds", "7"])
    assert code == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    errs = [summary["mu_err_by_s"][str(s)]["median"] for s in range(6)]
    assert all(b < 0.45 * a for a, b in zip(errs, errs[1:]))


def test_run_mfg_reproducible(tmp_path):
    cfg = _write(tmp_path, "m.json", _mfg_cfg())
    for out in ("a", "b"):
        assert main(["run-mfg", "--config", cfg, "--out", str(tmp_path / out)]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["mfg_trace_seed0.csv", "mfg_trace_seed1.csv", "summary.json"]
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_module_entry_point(tmp_path):
    cfg = _write(tmp_path, "c.json", {"model": SCALAR})
    env = {"MFG_LOG_LEVEL": "debug", "PATH": "/usr/bin:/bin"}
    res = subprocess.run([sys.executable, "-m", "lqmfg", "solve-exact", "--config", cfg, "--out",
                          str(tmp_path / "o")], capture_output=True, text=True, env=env)
    assert res.returncode == 0, res.stderr
    assert "mu_star" in res.stdout
