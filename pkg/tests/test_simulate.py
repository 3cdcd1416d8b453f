"""Event-driven pairwise-collision simulation: conservation laws,
determinism, event bookkeeping, and the collision-rate observable."""

import math

import numpy as np
import pytest

from kacflow.core import sample_microcanonical
from kacflow.functionals import qbar
from kacflow.seeding import rng_for
from kacflow.simulate import FlowRecord, KacSimulator, SimConfig, SimResult, simulate

E, D = 1.0, 3


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(N=1)
    with pytest.raises(ValueError):
        SimConfig(N=10, T=0.0)
    with pytest.raises(ValueError):
        SimConfig(N=10, majorant_refresh=-1)
    with pytest.raises(ValueError):
        SimConfig(N=10, T=1.0, snapshot_times=(2.0,))
    assert SimConfig(N=10).refresh_every == 640
    assert SimConfig(N=10, majorant_refresh=17).refresh_every == 17


def test_simulation_is_deterministic_given_seed():
    cfg = SimConfig(N=60, T=2.0, d=D, e=E, seed=12345)
    a, b = simulate(cfg), simulate(cfg)
    assert a.flow.n_events == b.flow.n_events
    assert np.array_equal(a.state.velocities, b.state.velocities)
    assert np.array_equal(a.flow.times, b.flow.times)
    c = simulate(SimConfig(N=60, T=2.0, d=D, e=E, seed=54321))
    assert not np.array_equal(a.state.velocities, c.state.velocities)


def test_event_count_ignores_recording():
    kw = dict(N=80, T=1.5, d=D, e=E, seed=9)
    with_events = simulate(SimConfig(record_events=True, **kw))
    without = simulate(SimConfig(record_events=False, **kw))
    assert with_events.flow.n_events == without.flow.n_events
    assert without.flow.times is None
    assert not without.flow.has_events
    assert np.array_equal(with_events.state.velocities, without.state.velocities)


def test_end_to_end_conservation():
    cfg = SimConfig(N=300, T=3.0, d=D, e=E, seed=77)
    res = simulate(cfg)
    v = res.state.velocities
    energy = 0.5 * float(np.sum(v * v)) / cfg.N
    assert abs(energy - E) / E < 1e-10
    scale = math.sqrt(2.0 * E)
    assert np.max(np.abs(v.sum(axis=0))) / (cfg.N * scale) < 1e-12


def test_recorded_events_are_consistent():
    cfg = SimConfig(N=120, T=1.0, d=D, e=E, seed=31)
    res = simulate(cfg)
    fl = res.flow
    assert fl.has_events
    assert fl.times.shape == (fl.n_events,)
    assert np.all(np.diff(fl.times) >= 0.0)
    assert fl.times[0] >= 0.0 and fl.times[-1] <= cfg.T
    assert np.all(fl.pairs[:, 0] != fl.pairs[:, 1])
    assert fl.pairs.min() >= 0 and fl.pairs.max() < cfg.N
    # per-event conservation of the colliding pair
    d = cfg.d
    pre_mom = fl.pre[:, :d] + fl.pre[:, d:]
    post_mom = fl.post[:, :d] + fl.post[:, d:]
    assert np.max(np.abs(pre_mom - post_mom)) < 1e-12
    pre_en = np.sum(fl.pre**2, axis=1)
    post_en = np.sum(fl.post**2, axis=1)
    assert np.max(np.abs(pre_en - post_en) / np.maximum(pre_en, 1e-30)) < 1e-12
    # unit scattering directions
    assert np.max(np.abs(np.linalg.norm(fl.omegas, axis=1) - 1.0)) < 1e-12


def test_flow_integral_of_one_counts_events():
    cfg = SimConfig(N=90, T=1.0, d=D, e=E, seed=3)
    res = simulate(cfg)
    val = res.flow.empirical_flow_integral(
        lambda t, v, vs, vp, vsp: np.ones_like(t)
    )
    assert val == pytest.approx(res.flow.n_events / cfg.N, rel=1e-14)
    assert res.flow.q == pytest.approx(val / cfg.T, rel=1e-14)


def test_collision_rate_near_equilibrium_value():
    cfg = SimConfig(N=2000, T=5.0, d=D, e=E, seed=101, record_events=False)
    res = simulate(cfg)
    assert abs(res.flow.q - qbar(E, D)) / qbar(E, D) < 0.05


def test_snapshots_conserve_energy():
    cfg = SimConfig(N=150, T=2.0, d=D, e=E, seed=8, snapshot_times=(0.5, 1.0, 1.5))
    res = simulate(cfg)
    assert len(res.snapshots) == 3
    for tm, snap in res.snapshots:
        assert 0.0 < tm <= cfg.T
        en = 0.5 * float(np.sum(snap**2)) / cfg.N
        assert abs(en - E) / E < 1e-10


def test_tilted_dynamics_changes_rate_and_tracks_integral():
    base = dict(N=400, T=2.0, d=D, e=E, record_events=False)
    up = simulate(SimConfig(seed=5, tilt_s=0.5, **base))
    down = simulate(SimConfig(seed=5, tilt_s=-0.5, **base))
    # tilting multiplies the jump intensity by exp(s)
    assert up.flow.n_events > down.flow.n_events

    state = sample_microcanonical(E, D, 400, rng_for(9, 0))
    eng = KacSimulator(state, rng_for(9, 1), tilt_s=0.5, track_true_rate=True)
    inc = eng.advance(1.0)
    assert inc is not None and inc > 0.0
    assert eng.rate_integral == pytest.approx(inc)


def test_flow_record_csv(tmp_path):
    cfg = SimConfig(N=40, T=0.5, d=D, e=E, seed=2)
    res = simulate(cfg)
    p = tmp_path / "events.csv"
    res.flow.to_csv(p, header_comment="config_hash=x master_seed=2")
    lines = p.read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1].startswith("time,pair_i,pair_j")
    assert len(lines) == 2 + res.flow.n_events


def test_engine_payload_roundtrip():
    rng = rng_for(99, 0)
    state = sample_microcanonical(E, D, 64, rng)
    eng = KacSimulator(state, rng_for(99, 1))
    eng.advance(0.5)
    payload = eng.clone_payload()
    v_before = eng.snapshot_velocities()

    eng2 = KacSimulator(sample_microcanonical(E, D, 64, rng_for(99, 2)), rng_for(99, 3))
    eng2.load_payload(payload)
    assert np.array_equal(eng2.snapshot_velocities(), v_before)
    eng2.check_conservation()
