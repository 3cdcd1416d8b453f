"""Command-line interface: config handling, exit codes, output layout,
and byte-level determinism."""

import json
import math
import os

import pytest

from kacflow.cli import ConfigError, config_hash, load_config, main


def write_cfg(tmp_path, payload, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return str(p)


TINY_LLN = {"lln": {"n_particles": 200, "horizon": 1.0, "replicas": 3}}


# ------------------------------------------------------------- config


def test_defaults_load_without_file():
    cfg = load_config(None)
    assert cfg["lln"]["replicas"] == 16
    assert cfg["scgf"]["clones"] == 200


def test_unknown_key_rejected(tmp_path):
    path = write_cfg(tmp_path, {"lln": {"particles": 5}})
    with pytest.raises(ConfigError):
        load_config(path)
    path = write_cfg(tmp_path, {"nonsense": 1})
    with pytest.raises(ConfigError):
        load_config(path)


def test_invalid_values_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, {"lln": {"replicas": 0}}))
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, {"control": {"mode": "three"}}))
    with pytest.raises(ConfigError):
        load_config(write_cfg(tmp_path, {"control": {"kappa": -1.0}}))


def test_malformed_json_rejected(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(p))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))


def test_config_hash_ignores_runtime_keys():
    a = load_config(None)
    b = load_config(None)
    b["out"] = "elsewhere"
    b["threads"] = 8
    b["quiet"] = True
    assert config_hash(a, "lln") == config_hash(b, "lln")
    b["seed"] = 5
    assert config_hash(a, "lln") != config_hash(b, "lln")
    assert config_hash(a, "lln") != config_hash(a, "scgf")


# ---------------------------------------------------------- exit codes


def test_config_error_exit_code(tmp_path):
    bad = write_cfg(tmp_path, {"lln": {"replicas": -1}})
    rc = main(["lln", "--config", bad, "--out", str(tmp_path / "o"), "--quiet"])
    assert rc == 2


def test_unknown_command_exits_via_argparse(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_relax_accuracy_failure_exit_code(tmp_path, monkeypatch):
    import dataclasses

    import kacflow.control as control_mod
    from kacflow.density import IsotropicDensity

    real = control_mod.relax(
        IsotropicDensity.maxwellian(0.5, 3), 1.0,
        tau_max=0.2, n_particles=2_000, seed=6, n_snapshots=4,
    )
    broken = dataclasses.replace(real, gamma=-0.5)
    monkeypatch.setattr(control_mod, "relax", lambda *a, **k: broken)
    cfg = write_cfg(
        tmp_path,
        {"relax": {"tau_max": 0.2, "n_particles": 2_000, "n_snapshots": 4}},
    )
    rc = main(["relax", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"])
    assert rc == 3


def test_control_infeasible_exit_code(tmp_path, capsys):
    cfg = write_cfg(
        tmp_path,
        {
            "control": {
                "kappa": 1e-5,
                "n_particles": 8_000,
                "n_samples": 8_000,
                "n_snapshots": 5,
                "tau_max": 1.0,
                "horizon": 1.0,
            }
        },
    )
    rc = main(["control", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 4
    out = capsys.readouterr()
    assert "infeasible" in (out.out + out.err)


# ------------------------------------------------------------- outputs


def _run_lln(tmp_path, tag, extra_args=(), seed="11", cfg_payload=None):
    cfg = write_cfg(tmp_path, cfg_payload or TINY_LLN, name=f"{tag}.json")
    out = tmp_path / tag
    rc = main(
        ["lln", "--config", cfg, "--seed", seed, "--out", str(out), "--quiet"]
        + list(extra_args)
    )
    assert rc == 0
    return (out / "lln.csv").read_bytes()


def test_lln_output_layout(tmp_path):
    data = _run_lln(tmp_path, "a").decode()
    lines = data.splitlines()
    assert lines[0].startswith("# config_hash=")
    assert "master_seed=11" in lines[0]
    assert lines[1] == "replica,q,mean,stderr,qbar"
    assert len(lines) == 2 + 3


def test_lln_is_deterministic(tmp_path):
    assert _run_lln(tmp_path, "r1") == _run_lln(tmp_path, "r2")


def test_lln_invariant_across_thread_counts(tmp_path):
    single = _run_lln(tmp_path, "t1", extra_args=["--threads", "1"])
    pooled = _run_lln(tmp_path, "t2", extra_args=["--threads", "3"])
    assert single == pooled


def test_lln_seed_changes_output(tmp_path):
    assert _run_lln(tmp_path, "s1", seed="11") != _run_lln(tmp_path, "s2", seed="12")


def test_plot_mirror_written(tmp_path):
    cfg = write_cfg(tmp_path, TINY_LLN)
    out = tmp_path / "o"
    rc = main(
        ["lln", "--config", cfg, "--seed", "1", "--out", str(out), "--quiet", "--plot"]
    )
    assert rc == 0
    dat = (out / "lln.dat").read_text().splitlines()
    csv = (out / "lln.csv").read_text().splitlines()
    assert len(dat) == len(csv)
    assert "," not in dat[1]


def test_selftest_runs_clean(tmp_path):
    cfg = write_cfg(tmp_path, {"selftest": {"n_samples": 20_000}})
    rc = main(["selftest", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"])
    assert rc == 0


def test_scgf_small_run_outputs(tmp_path):
    cfg = write_cfg(
        tmp_path,
        {
            "scgf": {
                "n_particles": 8,
                "clones": 50,
                "s_values": [-0.3, 0.0, 0.3],
                "t_values": [1.0],
                "repetitions": 2,
                "n_rate_points": 5,
            }
        },
    )
    out = tmp_path / "o"
    rc = main(["scgf", "--config", cfg, "--seed", "4", "--out", str(out), "--quiet"])
    assert rc == 0
    scgf_lines = (out / "scgf.csv").read_text().splitlines()
    assert scgf_lines[1] == "s,psi,stderr,N,T,M,seed"
    assert len(scgf_lines) == 2 + 3
    rate_lines = (out / "rate.csv").read_text().splitlines()
    assert rate_lines[1] == "q,i_hat,s_star"
    # the generating function at s=0 is pinned to zero
    zero_rows = [ln for ln in scgf_lines[2:] if ln.startswith("0.0,")]
    assert len(zero_rows) == 1 and zero_rows[0].split(",")[1] == "0.0"
