"""Command-line front end for the collision-rate toolkit.

Subcommands:

  lln       replica sweep of the empirical collision rate vs its limit
  bounds    rate-function bounds table over a grid of rates
  optimize  variational search for the square-root bilinear ceiling
  scgf      cloning estimates of the scaled generating function + duals
  relax     relaxation trace of a lifted datum toward equilibrium
  control   constructive steering path between boundary data
  selftest  fast internal consistency checks

One JSON config file (flag-overridable) drives every run; all
randomness derives from a single master seed through fixed counter
tags, so identical configs and seeds give byte-identical outputs at
any worker-pool width. Every output file carries the config hash and
the master seed in its first comment line. Exit codes: 0 success,
2 config error, 3 numerical-accuracy failure, 4 infeasible request.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

__all__ = [
    "main",
    "cmd_lln",
    "cmd_bounds",
    "cmd_optimize",
    "cmd_scgf",
    "cmd_relax",
    "cmd_control",
    "cmd_selftest",
    "load_config",
    "config_hash",
    "ConfigError",
]


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class AccuracyError(RuntimeError):
    """A numerical check failed beyond its stated tolerance."""


# --------------------------------------------------------------- config

DEFAULT_CONFIG = {
    "seed": 0,
    "out": "out",
    "threads": 1,
    "quiet": False,
    "plot": False,
    "lln": {
        "n_particles": 10_000,
        "horizon": 10.0,
        "d": 3,
        "e": 1.0,
        "replicas": 16,
    },
    "bounds": {
        "e": 1.0,
        "d": 3,
        "q_lo_factor": 1.0,
        "q_hi_factor": 4.0,
        "n_q": 8,
        "budget": 400,
        "n_samples": 200_000,
        "n_final": 1_000_000,
        "qhat_budget": 600,
    },
    "optimize": {
        "e": 1.0,
        "d": 3,
        "budget": 600,
        "n_samples": 400_000,
        "n_final": 1_600_000,
    },
    "scgf": {
        "n_particles": 50,
        "clones": 200,
        "e": 1.0,
        "d": 3,
        "s_values": [-0.5, -0.25, 0.0, 0.25, 0.5],
        "t_values": [5.0, 10.0, 20.0],
        "window": 0.5,
        "repetitions": 4,
        "n_rate_points": 9,
    },
    "relax": {
        "e": 1.0,
        "d": 3,
        "e0_factor": 0.5,
        "tau_max": 2.5,
        "n_particles": 100_000,
        "n_snapshots": 24,
    },
    "control": {
        "mode": "two",
        "e": 1.0,
        "d": 3,
        "e1_factor": 0.5,
        "e2_factor": 0.8,
        "horizon": 2.0,
        "kappa": None,
        "kappa_factor": 1.2,
        "n_particles": 400_000,
        "n_samples": 100_000,
        "n_snapshots": 48,
        "tau_max": 2.5,
        "n_slices": 12,
        "n_radial": 129,
    },
    "selftest": {
        "e": 1.0,
        "d": 3,
        "n_samples": 200_000,
    },
}

_RUNTIME_KEYS = ("out", "threads", "quiet", "plot")


def _deep_update(base: dict, extra: dict, path: str = "") -> dict:
    for key, val in extra.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            _deep_update(base[key], val, path + key + ".")
        else:
            base[key] = val
    return base


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _validate(cfg: dict) -> None:
    _require(isinstance(cfg["seed"], int) and cfg["seed"] >= 0, "seed must be a nonnegative integer")
    _require(int(cfg["threads"]) >= 1, "threads must be >= 1")
    for block in ("lln", "bounds", "optimize", "scgf", "relax", "control", "selftest"):
        sub = cfg[block]
        if "d" in sub:
            _require(sub["d"] in (2, 3), f"{block}.d must be 2 or 3")
        if "e" in sub:
            _require(sub["e"] > 0.0, f"{block}.e must be positive")
    _require(cfg["lln"]["n_particles"] >= 2, "lln.n_particles must be >= 2")
    _require(cfg["lln"]["horizon"] > 0.0, "lln.horizon must be positive")
    _require(cfg["lln"]["replicas"] >= 1, "lln.replicas must be >= 1")
    _require(cfg["bounds"]["n_q"] >= 2, "bounds.n_q must be >= 2")
    _require(
        0.0 < cfg["bounds"]["q_lo_factor"] <= cfg["bounds"]["q_hi_factor"],
        "bounds.q factors must satisfy 0 < lo <= hi",
    )
    _require(cfg["scgf"]["n_particles"] >= 2, "scgf.n_particles must be >= 2")
    _require(cfg["scgf"]["clones"] >= 2, "scgf.clones must be >= 2")
    _require(all(t > 0.0 for t in cfg["scgf"]["t_values"]), "scgf.t_values must be positive")
    _require(0.0 < cfg["relax"]["e0_factor"] <= 1.0, "relax.e0_factor must lie in (0, 1]")
    _require(cfg["relax"]["n_particles"] >= 4, "relax.n_particles must be >= 4")
    _require(cfg["control"]["mode"] in ("one", "two"), "control.mode must be 'one' or 'two'")
    for key in ("e1_factor", "e2_factor"):
        _require(0.0 < cfg["control"][key] <= 1.0, f"control.{key} must lie in (0, 1]")
    _require(cfg["control"]["horizon"] > 0.0, "control.horizon must be positive")
    kappa = cfg["control"]["kappa"]
    _require(kappa is None or kappa > 0.0, "control.kappa must be positive or null")


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    """Defaults, deep-updated by the JSON file, then by flag overrides."""
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as ex:
            raise ConfigError(f"cannot read config file: {ex}") from ex
        except json.JSONDecodeError as ex:
            raise ConfigError(f"config file is not valid JSON: {ex}") from ex
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        _deep_update(cfg, user)
    for key, val in (overrides or {}).items():
        if val is not None:
            cfg[key] = val
    _validate(cfg)
    return cfg


def config_hash(cfg: dict, command: str) -> str:
    """Hash of the physics-relevant configuration.

    Runtime plumbing (output directory, worker count, verbosity) is
    excluded so a run's outputs are byte-identical at any pool width."""
    physical = {k: v for k, v in cfg.items() if k not in _RUNTIME_KEYS}
    blob = json.dumps({"command": command, **physical}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _derive_seed(master: int, *path: int) -> int:
    """Deterministic child seed from the master seed and counter tags."""
    ss = np.random.SeedSequence(entropy=master, spawn_key=tuple(path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _header(cfg: dict, command: str) -> str:
    return f"config_hash={config_hash(cfg, command)} master_seed={cfg['seed']}"


def _write_lines(path: str, lines: list) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _emit_plot_mirror(csv_path: str) -> None:
    """Space-separated mirror of a CSV for direct gnuplot consumption."""
    dat_path = os.path.splitext(csv_path)[0] + ".dat"
    out = []
    with open(csv_path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                out.append(line)
            elif "," in line:
                out.append(" ".join(line.split(",")))
            else:
                out.append(line)
    _write_lines(dat_path, out)


def _say(cfg: dict, msg: str) -> None:
    if not cfg.get("quiet"):
        print(msg)


def _pool_map(threads: int, fn, jobs: list):
    """Map jobs through a bounded worker pool.

    Results are re-ordered by job index before reduction, so the output
    never depends on scheduling or on the pool width."""
    if threads <= 1 or len(jobs) <= 1:
        results = [fn(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            results = list(pool.map(fn, jobs))
    return sorted(results, key=lambda pair: pair[0])


# ------------------------------------------------------------------ lln


def _lln_replica(job):
    idx, n, d, e, horizon, seed = job
    from kacflow.simulate import SimConfig, simulate

    res = simulate(
        SimConfig(
            N=n, d=d, e=e, T=horizon, seed=seed, record_events=False
        )
    )
    return idx, res.flow.q


def cmd_lln(cfg: dict) -> int:
    from kacflow.functionals import qbar
    from kacflow.seeding import LLN_REPLICA

    sub = cfg["lln"]
    n, d, e = sub["n_particles"], sub["d"], sub["e"]
    horizon, replicas = sub["horizon"], sub["replicas"]
    qb = qbar(e, d)
    jobs = [
        (r, n, d, e, horizon, _derive_seed(cfg["seed"], LLN_REPLICA, r))
        for r in range(replicas)
    ]
    results = _pool_map(int(cfg["threads"]), _lln_replica, jobs)
    values = np.array([q for _, q in results])
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    out = os.path.join(cfg["out"], "lln.csv")
    lines = [f"# {_header(cfg, 'lln')}", "replica,q,mean,stderr,qbar"]
    for idx, q in results:
        lines.append(
            ",".join([str(idx), repr(float(q)), repr(mean), repr(stderr), repr(qb)])
        )
    _write_lines(out, lines)
    if cfg.get("plot"):
        _emit_plot_mirror(out)
    _say(cfg, f"lln: mean={mean:.5f} stderr={stderr:.5f} qbar={qb:.5f} -> {out}")
    return 0


# --------------------------------------------------------------- bounds


def _iplus_point(job):
    idx, q, e, d, budget, n_samples, n_final, seed = job
    from kacflow.optimize import minimize_i_plus

    res = minimize_i_plus(
        q, e, d, budget=budget, rng=np.random.default_rng(seed),
        n_samples=n_samples, n_final=n_final,
    )
    return idx, (res.value, res.stderr, res.converged)


def cmd_bounds(cfg: dict) -> int:
    from kacflow.functionals import RateBoundsTable, i_minus, j_e, poisson_bound, qbar
    from kacflow.optimize import maximize_R4
    from kacflow.seeding import OPTIMIZER

    sub = cfg["bounds"]
    e, d = sub["e"], sub["d"]
    qb = qbar(e, d)
    _say(cfg, f"bounds: qbar={qb:.5f}, searching the bilinear ceiling ...")
    top = maximize_R4(
        e, d, budget=sub["qhat_budget"],
        rng=np.random.default_rng(_derive_seed(cfg["seed"], OPTIMIZER, 0)),
    )
    qhat = top.value
    qs = np.linspace(sub["q_lo_factor"] * qb, sub["q_hi_factor"] * qb, sub["n_q"])
    jobs = [
        (
            k, float(q), e, d, sub["budget"], sub["n_samples"], sub["n_final"],
            _derive_seed(cfg["seed"], OPTIMIZER, k + 1),
        )
        for k, q in enumerate(qs)
    ]
    results = _pool_map(int(cfg["threads"]), _iplus_point, jobs)
    iplus = np.array([v for _, (v, _se, _c) in results])
    iplus_se = np.array([se for _, (_v, se, _c) in results])
    flags = [bool(c) for _, (_v, _se, c) in results]
    table = RateBoundsTable(
        q=qs,
        i_minus=np.array([i_minus(float(q), e, d, qhat) for q in qs]),
        i_plus=iplus,
        poisson=np.array([poisson_bound(float(q), e, d) for q in qs]),
        j=np.array([j_e(float(q), e, d) for q in qs]),
        e=e,
        d=d,
        qbar=qb,
        qhat=qhat,
        qhat_se=top.stderr,
        i_plus_se=iplus_se,
    )
    tol = 3.0 * float(np.max(iplus_se)) if iplus_se.size else 0.0
    try:
        table.validate(tol=tol)
    except ValueError as ex:
        raise AccuracyError(f"bounds ordering violated beyond 3 sigma: {ex}") from ex
    csv_path = os.path.join(cfg["out"], "bounds.csv")
    table.to_csv(csv_path, header_comment=_header(cfg, "bounds"))
    manifest = {
        "header": _header(cfg, "bounds"),
        "qbar": qb,
        "qhat": qhat,
        "qhat_stderr": top.stderr,
        "qhat_converged": top.converged,
        "i_plus_stderr": [float(x) for x in iplus_se],
        "i_plus_converged": flags,
        "e": e,
        "d": d,
    }
    with open(os.path.join(cfg["out"], "bounds.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    if cfg.get("plot"):
        _emit_plot_mirror(csv_path)
    _say(cfg, f"bounds: qhat={qhat:.5f} (+{qhat - qb:.5f} over qbar) -> {csv_path}")
    return 0


# ------------------------------------------------------------- optimize


def cmd_optimize(cfg: dict) -> int:
    from kacflow.functionals import qbar
    from kacflow.optimize import maximize_R4
    from kacflow.seeding import OPTIMIZER

    sub = cfg["optimize"]
    e, d = sub["e"], sub["d"]
    res = maximize_R4(
        e, d, budget=sub["budget"],
        rng=np.random.default_rng(_derive_seed(cfg["seed"], OPTIMIZER, 99)),
        n_samples=sub["n_samples"], n_final=sub["n_final"],
    )
    qb = qbar(e, d)
    payload = {
        "header": _header(cfg, "optimize"),
        "qbar": qb,
        "gap": res.value - qb,
        "gap_sigmas": (res.value - qb) / res.stderr if res.stderr > 0 else math.inf,
        **res.to_dict(),
    }
    out = os.path.join(cfg["out"], "optimize.json")
    with open(out, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
    _say(cfg, f"optimize: qhat={res.value:.5f} +-{res.stderr:.5f} -> {out}")
    return 0


# ----------------------------------------------------------------- scgf


def _scgf_sweep(job):
    idx, s_values, n, horizon, m, e, d, window, reps, seed = job
    from kacflow.cloning import estimate_scgf

    est = estimate_scgf(
        s_values, N=n, T=horizon, M=m, e=e, d=d, seed=seed,
        window=window, n_repetitions=reps,
    )
    return idx, est


def cmd_scgf(cfg: dict) -> int:
    from kacflow.cloning import ScgfEstimate, legendre_rate, rate_rows_to_csv
    from kacflow.seeding import CLONING

    sub = cfg["scgf"]
    s_values = [float(s) for s in sub["s_values"]]
    t_values = [float(t) for t in sub["t_values"]]
    jobs = [
        (
            k, s_values, sub["n_particles"], t, sub["clones"], sub["e"], sub["d"],
            sub["window"], sub["repetitions"],
            _derive_seed(cfg["seed"], CLONING, k),
        )
        for k, t in enumerate(t_values)
    ]
    results = _pool_map(int(cfg["threads"]), _scgf_sweep, jobs)
    points = []
    for _, est in results:
        points.extend(est.points)
    merged = ScgfEstimate(points=points)
    scgf_path = os.path.join(cfg["out"], "scgf.csv")
    merged.to_csv(scgf_path, header_comment=_header(cfg, "scgf"))
    # Legendre dual of the longest-horizon sweep
    last = results[-1][1]
    rows = legendre_rate(last, q_grid=None)
    rate_path = os.path.join(cfg["out"], "rate.csv")
    rate_rows_to_csv(rows, rate_path, header_comment=_header(cfg, "scgf"))
    flagged = sum(1 for p in points if p.flagged)
    if cfg.get("plot"):
        _emit_plot_mirror(scgf_path)
        _emit_plot_mirror(rate_path)
    _say(
        cfg,
        f"scgf: {len(points)} points ({flagged} flagged) -> {scgf_path}, {rate_path}",
    )
    return 0


# ---------------------------------------------------------------- relax


def cmd_relax(cfg: dict) -> int:
    from kacflow.control import relax
    from kacflow.density import IsotropicDensity

    sub = cfg["relax"]
    e, d = sub["e"], sub["d"]
    pi0 = IsotropicDensity.maxwellian(sub["e0_factor"] * e, d)
    trace = relax(
        pi0, e, tau_max=sub["tau_max"], n_particles=sub["n_particles"],
        seed=cfg["seed"], n_snapshots=sub["n_snapshots"],
    )
    csv_path = os.path.join(cfg["out"], "relax.csv")
    lines = [f"# {_header(cfg, 'relax')}", "tau,tv"]
    for t, v in zip(trace.times, trace.tv):
        lines.append(",".join([repr(float(t)), repr(float(v))]))
    _write_lines(csv_path, lines)
    manifest = {
        "header": _header(cfg, "relax"),
        "C": trace.C,
        "gamma": trace.gamma,
        "r_squared": trace.r_squared,
        "noise_floor": trace.noise_floor,
        "relaxed": trace.relaxed,
        "fit_start": trace.fit_start,
        "carrier_speed": trace.carrier_speed,
        "grid_rmax": trace.grid_rmax,
        "n_particles": trace.n_particles,
        "e": e,
        "d": d,
        "seed": cfg["seed"],
    }
    with open(os.path.join(cfg["out"], "relax.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    if cfg.get("plot"):
        _emit_plot_mirror(csv_path)
    _say(
        cfg,
        f"relax: gamma={trace.gamma:.4f} R2={trace.r_squared:.4f} "
        f"(noise floor {trace.noise_floor:.4f}) -> {csv_path}",
    )
    if not trace.relaxed:
        raise AccuracyError("relaxation not observed: fitted decay rate <= 0")
    return 0


# -------------------------------------------------------------- control


def cmd_control(cfg: dict) -> int:
    from kacflow.control import (
        balance_residual,
        build_one_sided_path,
        build_two_sided_path,
    )
    from kacflow.density import IsotropicDensity
    from kacflow.functionals import (
        chain_rule_residual,
        entropy_H,
        path_cost_J,
        path_flux_mass,
        time_reverse,
    )

    sub = cfg["control"]
    e, d, horizon = sub["e"], sub["d"], sub["horizon"]
    pi1 = IsotropicDensity.maxwellian(sub["e1_factor"] * e, d)
    common = dict(
        tau_max=sub["tau_max"], n_particles=sub["n_particles"],
        n_samples=sub["n_samples"], seed=cfg["seed"],
        n_snapshots=sub["n_snapshots"],
    )
    if sub["mode"] == "one":
        if sub["kappa"] is None:
            probe = build_one_sided_path(pi1, e, horizon, kappa=1e9, **common)
            kappa = sub["kappa_factor"] * probe.kappa_star
            cp = build_one_sided_path(pi1, e, horizon, kappa=kappa, **common)
        else:
            cp = build_one_sided_path(pi1, e, horizon, kappa=sub["kappa"], **common)
    else:
        pi2 = IsotropicDensity.maxwellian(sub["e2_factor"] * e, d)
        cp = build_two_sided_path(pi1, pi2, e, horizon, kappa=sub["kappa"], **common)
    sampler = cp.sampler()
    prop = cp.proposal()
    mass, mass_se = path_flux_mass(cp.path, sampler=sampler, **prop)
    cost, cost_se = path_cost_J(cp.path, sampler=sampler, **prop)
    cost_rev, _ = path_cost_J(time_reverse(cp.path), sampler=sampler, **prop)
    chain = chain_rule_residual(cp.path, e, sampler=sampler, **prop)
    bal = balance_residual(cp, sampler=sampler)
    h0 = entropy_H(cp.path.densities[0], e)
    ht = entropy_H(cp.path.densities[-1], e)
    reversal_residual = abs(h0 + cost - ht - cost_rev)
    chain_residual = abs((cost_rev - cost) + chain["chain"])

    # path export: one row per (time slice, radial node)
    n_slices = min(int(sub["n_slices"]), cp.path.times.size)
    slice_ids = np.unique(
        np.linspace(0, cp.path.times.size - 1, n_slices).astype(int)
    )
    csv_path = os.path.join(cfg["out"], "control_path.csv")
    lines = [f"# {_header(cfg, 'control')}", "t,r,f,q1_mass,q2_mass"]
    q1_of = dict(zip(np.round(cp.tau_nodes, 12), cp.q1))
    q2_of = dict(zip(np.round(cp.tau_nodes, 12), cp.q2))
    for idx in slice_ids:
        dens = cp.path.densities[idx]
        t = float(cp.path.times[idx])
        sel = np.unique(
            np.linspace(0, dens.r.size - 1, int(sub["n_radial"])).astype(int)
        )
        fl = sampler.fields(dens, **prop)
        q1v = fl.mean_se()[0]
        q2v = fl.mean_se(np.clip(1.0 - fl.r, 0.0, None))[0]
        for j in sel:
            lines.append(
                ",".join(
                    [
                        repr(t),
                        repr(float(dens.r[j])),
                        repr(float(dens.f[j])),
                        repr(float(q1v)),
                        repr(float(q2v)),
                    ]
                )
            )
    _write_lines(csv_path, lines)
    manifest = {
        "header": _header(cfg, "control"),
        "mode": sub["mode"],
        "kappa": cp.kappa,
        "kappa_star": cp.kappa_star,
        "tau_star": cp.tau_star,
        "horizon": cp.horizon,
        "nodes": int(cp.path.times.size),
        "mass": mass,
        "mass_stderr": mass_se,
        "mass_rel_err": abs(mass - cp.kappa) / cp.kappa,
        "cost": cost,
        "cost_stderr": cost_se,
        "cost_reversed": cost_rev,
        "entropy_start": h0,
        "entropy_end": ht,
        "reversal_residual": reversal_residual,
        "chain": chain["chain"],
        "dH": chain["dH"],
        "chain_rule_residual": chain_residual,
        "balance_max_residual": bal["max_residual"],
        "proposal": prop,
        "seeds": {"master": cfg["seed"], "sampler": cp.sampler_seed},
        "n_samples": cp.n_samples,
    }
    with open(os.path.join(cfg["out"], "control_manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    if cfg.get("plot"):
        _emit_plot_mirror(csv_path)
    _say(
        cfg,
        f"control: kappa={cp.kappa:.4f} (needs {cp.kappa_star:.4f}) "
        f"cost={cost:.4f} balance={bal['max_residual']:.4f} -> {csv_path}",
    )
    return 0


# ------------------------------------------------------------- selftest


def cmd_selftest(cfg: dict) -> int:
    from kacflow.core import collide, sample_microcanonical, sample_scatter_direction
    from kacflow.density import IsotropicDensity
    from kacflow.functionals import CollisionSampler, entropy_H, qbar, qbar_mc
    from kacflow.seeding import SELFTEST, rng_for
    from kacflow.simulate import SimConfig, simulate

    sub = cfg["selftest"]
    e, d = sub["e"], sub["d"]
    checks = {}
    rng = rng_for(cfg["seed"], SELFTEST, 0)

    vel = sample_microcanonical(e, d, 64, rng).velocities.copy()
    worst_p = worst_e = 0.0
    for _ in range(10_000):
        i, j = rng.choice(64, size=2, replace=False)
        om = sample_scatter_direction(vel[i], vel[j], rng)
        vi, vj = collide(vel[i], vel[j], om)
        scale = max(1.0, float(np.max(np.abs(np.concatenate([vel[i], vel[j]])))))
        worst_p = max(
            worst_p,
            float(np.max(np.abs((vi + vj) - (vel[i] + vel[j])))) / scale,
        )
        pre = float(vel[i] @ vel[i] + vel[j] @ vel[j])
        post = float(vi @ vi + vj @ vj)
        worst_e = max(worst_e, abs(post - pre) / max(pre, 1e-300))
        vel[i], vel[j] = vi, vj
    checks["collision_momentum_rel"] = worst_p
    checks["collision_energy_rel"] = worst_e
    # momentum is conserved identically by the map; the only float
    # residue is one rounding per component, bounded by 2^-48 relative
    ok = worst_p <= 2.0**-48 and worst_e <= 1e-12

    qb = qbar(e, d)
    mc, mc_se = qbar_mc(e, d, 2_000_000, rng_for(cfg["seed"], SELFTEST, 1))
    checks["qbar_analytic"] = qb
    checks["qbar_mc"] = mc
    checks["qbar_sigmas"] = abs(qb - mc) / mc_se
    ok = ok and abs(qb - mc) <= 3.0 * mc_se

    for ratio in (0.3, 0.6, 0.9):
        q = ratio * qb
        eps = e * ratio * ratio
        lhs = entropy_H(IsotropicDensity.maxwellian(eps, d), e)
        rhs = d * math.log(qb / q)
        checks[f"entropy_identity_{ratio}"] = abs(lhs - rhs)
        ok = ok and abs(lhs - rhs) <= 1e-4

    smp = CollisionSampler(d, sub["n_samples"], rng_for(cfg["seed"], SELFTEST, 2))
    fl = smp.fields(IsotropicDensity.maxwellian(e, d), proposal_e=e)
    r2, r2_se = fl.mean_se()
    checks["R2_at_equilibrium"] = r2
    checks["R2_sigmas"] = abs(r2 - qb) / r2_se
    ok = ok and abs(r2 - qb) <= 3.0 * r2_se

    res_a = simulate(SimConfig(N=64, d=d, e=e, T=1.0, seed=cfg["seed"]))
    res_b = simulate(SimConfig(N=64, d=d, e=e, T=1.0, seed=cfg["seed"]))
    det = res_a.flow.n_events == res_b.flow.n_events and np.array_equal(
        res_a.state.velocities, res_b.state.velocities
    )
    checks["determinism"] = bool(det)
    ok = ok and det

    payload = {
        "header": _header(cfg, "selftest"),
        "ok": bool(ok),
        "checks": {
            k: (v if isinstance(v, bool) else float(v)) for k, v in checks.items()
        },
    }
    out = os.path.join(cfg["out"], "selftest.json")
    with open(out, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
    _say(cfg, f"selftest: {'ok' if ok else 'FAILED'} -> {out}")
    if not ok:
        raise AccuracyError("selftest checks failed; see selftest.json")
    return 0


# ----------------------------------------------------------------- main

_COMMANDS = {
    "lln": cmd_lln,
    "bounds": cmd_bounds,
    "optimize": cmd_optimize,
    "scgf": cmd_scgf,
    "relax": cmd_relax,
    "control": cmd_control,
    "selftest": cmd_selftest,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kacflow",
        description="Collision-rate large-deviation toolkit for the mean-field jump process.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument("--seed", type=int, metavar="U64", help="master seed override")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--threads", type=int, metavar="K", help="worker pool width")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    parser.add_argument(
        "--plot", action="store_true",
        help="also write gnuplot-compatible .dat mirrors of the CSV outputs",
    )
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "out": args.out,
        "threads": args.threads,
        "quiet": True if args.quiet else None,
        "plot": True if args.plot else None,
    }
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as ex:
        print(f"config error: {ex}", file=sys.stderr)
        return 2
    os.makedirs(cfg["out"], exist_ok=True)
    from kacflow.control import InfeasibleKappaError

    try:
        return _COMMANDS[args.command](cfg)
    except ConfigError as ex:
        print(f"config error: {ex}", file=sys.stderr)
        return 2
    except InfeasibleKappaError as ex:
        print(
            f"infeasible request: {ex} (computed threshold {ex.kappa_star!r})",
            file=sys.stderr,
        )
        return 4
    except AccuracyError as ex:
        print(f"numerical-accuracy failure: {ex}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
