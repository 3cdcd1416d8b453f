"""Exact event-driven simulation of the mean-field collision process.

The process jumps at total rate (1/N) sum_{i<j} C_d |v_i - v_j|, each
jump scattering one pair along a direction drawn proportionally to the
kernel. Events are generated by thinning: candidate times arrive at the
majorant rate (N-1) C_d v_max (times exp(s) under an exponential tilt),
a pair is drawn uniformly, and the candidate is accepted with
probability |v_i - v_j| / (2 v_max) <= 1. v_max is a maintained upper
bound on the maximum speed: it is bumped up by post-collision speeds as
they occur, so it never undershoots, and recomputed exactly every
majorant_refresh accepted events so it never drifts far above the true
maximum (which itself can never exceed sqrt(2 N e) on the shell).

The tilt multiplies every jump rate by exp(s) and leaves the jump chain
unchanged. When track_true_rate is set, the engine maintains the exact
total rate between events (incremental pair-distance sums; the relative
speed of the colliding pair itself is conserved) and accumulates its
time integral, which is what the cloning weights need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from kacflow.core import ANGULAR_CONSTANT, ParticleState, sample_microcanonical
from kacflow.seeding import SIM_DYNAMICS, SIM_INIT, rng_for

_CONSERVATION_RTOL = 1e-8
_BLOCK = 8192


@dataclass
class SimConfig:
    N: int
    d: int = 3
    e: float = 1.0
    T: float = 1.0
    seed: int = 0
    tilt_s: float = 0.0
    snapshot_times: tuple = ()
    majorant_refresh: int = 0  # 0 selects the default 64 * N
    record_events: bool = True

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("need at least two particles")
        if self.T <= 0.0:
            raise ValueError("horizon must be positive")
        if self.majorant_refresh < 0:
            raise ValueError("majorant_refresh must be nonnegative")
        if any(t < 0.0 or t > self.T for t in self.snapshot_times):
            raise ValueError("snapshot times must lie in [0, T]")

    @property
    def refresh_every(self) -> int:
        return self.majorant_refresh if self.majorant_refresh > 0 else 64 * self.N


@dataclass
class FlowRecord:
    """Columnar record of the collision events of one run."""

    n_events: int
    N: int
    T: float
    d: int
    times: np.ndarray | None = None
    pairs: np.ndarray | None = None
    omegas: np.ndarray | None = None
    pre: np.ndarray | None = None  # (n, 2d): colliding pair before
    post: np.ndarray | None = None  # (n, 2d): colliding pair after

    @property
    def q(self) -> float:
        """Collision events per particle per unit time."""
        return self.n_events / (self.N * self.T)

    @property
    def has_events(self) -> bool:
        return self.times is not None

    def empirical_flow_integral(self, F) -> float:
        """(1/N) * sum over events of F(t, v, v*, v', v*').

        F is called once with five arrays: times (n,), and the four
        velocity blocks of shape (n, d); it must return shape (n,)."""
        if not self.has_events:
            raise ValueError("events were not recorded")
        d = self.d
        vals = F(
            self.times,
            self.pre[:, :d],
            self.pre[:, d:],
            self.post[:, :d],
            self.post[:, d:],
        )
        return float(np.sum(vals)) / self.N

    def to_csv(self, path, header_comment: str | None = None) -> None:
        if not self.has_events:
            raise ValueError("events were not recorded")
        d = self.d
        cols = ["time", "pair_i", "pair_j"]
        cols += [f"omega_{k}" for k in range(d)]
        cols += [f"pre_i_{k}" for k in range(d)] + [f"pre_j_{k}" for k in range(d)]
        cols += [f"post_i_{k}" for k in range(d)] + [f"post_j_{k}" for k in range(d)]
        lines = []
        if header_comment:
            lines.append(f"# {header_comment}")
        lines.append(",".join(cols))
        for k in range(self.n_events):
            row = [repr(float(self.times[k])), str(int(self.pairs[k, 0])), str(int(self.pairs[k, 1]))]
            row += [repr(float(x)) for x in self.omegas[k]]
            row += [repr(float(x)) for x in self.pre[k]]
            row += [repr(float(x)) for x in self.post[k]]
            lines.append(",".join(row))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


@dataclass
class SimResult:
    state: ParticleState
    flow: FlowRecord
    snapshots: list
    rate_integral: float | None
    proposals: int


class _BlockRng:
    """Scalar draws served from pre-generated numpy blocks."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self._exp = []
        self._uni = []
        self._nrm = []
        self._pe = 0
        self._pu = 0
        self._pn = 0

    def exponential(self) -> float:
        if self._pe == len(self._exp):
            self._exp = self.rng.standard_exponential(_BLOCK).tolist()
            self._pe = 0
        v = self._exp[self._pe]
        self._pe += 1
        return v

    def uniform(self) -> float:
        if self._pu == len(self._uni):
            self._uni = self.rng.random(_BLOCK).tolist()
            self._pu = 0
        v = self._uni[self._pu]
        self._pu += 1
        return v

    def normal(self) -> float:
        if self._pn == len(self._nrm):
            self._nrm = self.rng.standard_normal(_BLOCK).tolist()
            self._pn = 0
        v = self._nrm[self._pn]
        self._pn += 1
        return v

    def pair(self, N: int):
        i = int(self.uniform() * N)
        j = int(self.uniform() * (N - 1))
        if j >= i:
            j += 1
        if i > j:
            i, j = j, i
        return i, j


class KacSimulator:
    """Stateful engine; advance() moves the state to a target time."""

    def __init__(
        self,
        state: ParticleState,
        rng: np.random.Generator,
        tilt_s: float = 0.0,
        refresh_every: int = 0,
        track_true_rate: bool = False,
    ):
        self.N = state.N
        self.d = state.d
        self.e = state.e
        self.cd = ANGULAR_CONSTANT[self.d]
        self.tilt = math.exp(tilt_s)
        self.refresh_every = refresh_every if refresh_every > 0 else 64 * self.N
        self.track = track_true_rate
        self.t = 0.0
        self.accepted = 0
        self.proposals = 0
        self.rate_integral = 0.0 if track_true_rate else None
        self._blk = _BlockRng(rng)
        self.vel = [list(map(float, row)) for row in state.velocities]
        self._mirror = np.array(state.velocities, dtype=float)
        self._vmax = float(np.max(np.linalg.norm(self._mirror, axis=1)))
        self._vmax_cap = math.sqrt(2.0 * self.N * self.e)
        self._init_conserved = state.conserved()
        if self.track:
            self._dist_sum = self._full_distance_sum()

    # ------------------------------------------------------------ internals

    def _full_distance_sum(self) -> float:
        total = 0.0
        v = self._mirror
        for i in range(self.N - 1):
            total += float(np.sum(np.linalg.norm(v[i + 1 :] - v[i], axis=1)))
        return total

    @property
    def true_total_rate(self) -> float:
        """Exact untilted total jump rate (1/N) sum_{i<j} C_d |v_i - v_j|."""
        if not self.track:
            raise ValueError("engine was not tracking the true rate")
        return self.cd * self._dist_sum / self.N

    def _majorant(self) -> float:
        return (self.N - 1) * self.cd * self._vmax * self.tilt

    def _refresh_vmax(self) -> None:
        self._vmax = float(np.max(np.linalg.norm(self._mirror, axis=1)))

    def check_conservation(self) -> None:
        c0 = self._init_conserved
        c1 = ParticleState(self._mirror, self.e).conserved()
        scale = math.sqrt(2.0 * self.e)
        if abs(c1.energy - c0.energy) > _CONSERVATION_RTOL * self.e or np.any(
            np.abs(c1.momentum - c0.momentum) > _CONSERVATION_RTOL * scale
        ):
            raise RuntimeError("conservation drift beyond 1e-8: invariant violation")

    def state(self) -> ParticleState:
        return ParticleState(self._mirror.copy(), self.e)

    def snapshot_velocities(self) -> np.ndarray:
        return self._mirror.copy()

    def clone_payload(self):
        """Internal state needed to duplicate this trajectory's law."""
        payload = {
            "vel": [row[:] for row in self.vel],
            "vmax": self._vmax,
            "t": self.t,
            "accepted": self.accepted,
        }
        if self.track:
            payload["dist_sum"] = self._dist_sum
        return payload

    def load_payload(self, payload) -> None:
        self.vel = [row[:] for row in payload["vel"]]
        self._mirror = np.array(self.vel, dtype=float)
        self._vmax = payload["vmax"]
        self.t = payload["t"]
        self.accepted = payload["accepted"]
        if self.track:
            self._dist_sum = payload["dist_sum"]

    # -------------------------------------------------------------- advance

    def advance(self, t_end: float, events: list | None = None):
        """Run until t_end. If events is a list, one tuple per accepted
        event is appended: (t, i, j, omega, pre_i, pre_j, post_i, post_j).
        Returns the integral of the true total rate over the stretch when
        tracking, else None."""
        if t_end < self.t:
            raise ValueError("cannot run backwards")
        d = self.d
        blk = self._blk
        vel = self.vel
        N = self.N
        track = self.track
        window_rate_integral = 0.0
        lam = self._majorant()
        t = self.t
        seg_start = t
        lam_true = self.cd * self._dist_sum / N if track else 0.0

        while True:
            dt = blk.exponential() / lam
            if t + dt >= t_end:
                t = t_end
                break
            t += dt
            self.proposals += 1
            i, j = blk.pair(N)
            vi = vel[i]
            vj = vel[j]
            if d == 3:
                dx = vi[0] - vj[0]
                dy = vi[1] - vj[1]
                dz = vi[2] - vj[2]
                rel = math.sqrt(dx * dx + dy * dy + dz * dz)
            else:
                dx = vi[0] - vj[0]
                dy = vi[1] - vj[1]
                rel = math.sqrt(dx * dx + dy * dy)
            athr = rel / (2.0 * self._vmax)
            if athr > 1.0 + 1e-12:
                raise RuntimeError("majorant violated: acceptance above 1")
            if blk.uniform() >= athr:
                continue

            # accepted: scattering direction with density |u . omega|
            if d == 3:
                ux, uy, uz = dx / rel, dy / rel, dz / rel
                while True:
                    ox = blk.normal()
                    oy = blk.normal()
                    oz = blk.normal()
                    onrm = math.sqrt(ox * ox + oy * oy + oz * oz)
                    if onrm == 0.0:
                        continue
                    ox, oy, oz = ox / onrm, oy / onrm, oz / onrm
                    if blk.uniform() < abs(ux * ox + uy * oy + uz * oz):
                        break
                transfer = ox * (vj[0] - vi[0]) + oy * (vj[1] - vi[1]) + oz * (vj[2] - vi[2])
                new_i = [vi[0] + transfer * ox, vi[1] + transfer * oy, vi[2] + transfer * oz]
                new_j = [vj[0] - transfer * ox, vj[1] - transfer * oy, vj[2] - transfer * oz]
                omega = (ox, oy, oz)
            else:
                ux, uy = dx / rel, dy / rel
                while True:
                    ox = blk.normal()
                    oy = blk.normal()
                    onrm = math.sqrt(ox * ox + oy * oy)
                    if onrm == 0.0:
                        continue
                    ox, oy = ox / onrm, oy / onrm
                    if blk.uniform() < abs(ux * ox + uy * oy):
                        break
                transfer = ox * (vj[0] - vi[0]) + oy * (vj[1] - vi[1])
                new_i = [vi[0] + transfer * ox, vi[1] + transfer * oy]
                new_j = [vj[0] - transfer * ox, vj[1] - transfer * oy]
                omega = (ox, oy)

            if track:
                window_rate_integral += lam_true * (t - seg_start)
                seg_start = t
                mirror = self._mirror
                old_i = mirror[i].copy()
                old_j = mirror[j].copy()
                arr_i = np.array(new_i)
                arr_j = np.array(new_j)
                diff = (
                    np.linalg.norm(mirror - arr_i, axis=1)
                    - np.linalg.norm(mirror - old_i, axis=1)
                    + np.linalg.norm(mirror - arr_j, axis=1)
                    - np.linalg.norm(mirror - old_j, axis=1)
                )
                # exclude the pair's own entries: |v_i - v_j| is conserved
                diff[i] = 0.0
                diff[j] = 0.0
                self._dist_sum += float(np.sum(diff))
                lam_true = self.cd * self._dist_sum / N

            if events is not None:
                events.append((t, i, j, omega, tuple(vi), tuple(vj), tuple(new_i), tuple(new_j)))

            vel[i] = new_i
            vel[j] = new_j
            self._mirror[i] = new_i
            self._mirror[j] = new_j
            self.accepted += 1

            si = math.sqrt(sum(x * x for x in new_i))
            sj = math.sqrt(sum(x * x for x in new_j))
            bumped = max(si, sj)
            if bumped > self._vmax:
                self._vmax = min(bumped, self._vmax_cap)
            if self.accepted % self.refresh_every == 0:
                self._refresh_vmax()
            lam = self._majorant()

        if track:
            window_rate_integral += lam_true * (t - seg_start)
            self.rate_integral += window_rate_integral
        self.t = t
        return window_rate_integral if track else None


def simulate(cfg: SimConfig, initial: ParticleState | None = None) -> SimResult:
    """One-shot run over [0, T] with snapshots at the requested times.

    With no explicit initial state, the initial condition is a uniform
    draw from the shell, from a stream derived from cfg.seed; the
    dynamics consumes an independent derived stream."""
    if initial is None:
        initial = sample_microcanonical(cfg.e, cfg.d, cfg.N, rng_for(cfg.seed, SIM_INIT))
    else:
        initial.validate()
        if initial.N != cfg.N or initial.d != cfg.d:
            raise ValueError("initial state does not match the config")
    rng = rng_for(cfg.seed, SIM_DYNAMICS)
    eng = KacSimulator(
        initial,
        rng,
        tilt_s=cfg.tilt_s,
        refresh_every=cfg.refresh_every,
        track_true_rate=False,
    )
    events = [] if cfg.record_events else None
    snaps = []
    marks = sorted(set(float(t) for t in cfg.snapshot_times))
    for tm in marks:
        eng.advance(tm, events)
        snaps.append((tm, eng.snapshot_velocities()))
    eng.advance(cfg.T, events)
    eng.check_conservation()

    n = eng.accepted
    if events is not None:
        d = cfg.d
        times = np.array([ev[0] for ev in events])
        pairs = np.array([(ev[1], ev[2]) for ev in events], dtype=np.int64).reshape(n, 2)
        omegas = np.array([ev[3] for ev in events]).reshape(n, d)
        pre = np.array([ev[4] + ev[5] for ev in events]).reshape(n, 2 * d)
        post = np.array([ev[6] + ev[7] for ev in events]).reshape(n, 2 * d)
        flow = FlowRecord(
            n_events=n, N=cfg.N, T=cfg.T, d=cfg.d,
            times=times, pairs=pairs, omegas=omegas, pre=pre, post=post,
        )
    else:
        flow = FlowRecord(n_events=n, N=cfg.N, T=cfg.T, d=cfg.d)

    return SimResult(
        state=eng.state(),
        flow=flow,
        snapshots=snaps,
        rate_integral=eng.rate_integral,
        proposals=eng.proposals,
    )
