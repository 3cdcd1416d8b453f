"""Rate functions, entropies, collision-bilinear functionals, path costs.

Analytic pieces (mean collision rate, the explicit rate function on the
subtypical side, the Poissonian upper envelope) are closed forms. The
variational pieces go through one shared Monte Carlo engine that
importance-samples pre-collision pairs from a Gaussian proposal and
scattering directions uniformly, then reweights; the same draws are
reused across calls so that optimization sees a deterministic objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from kacflow.core import ANGULAR_CONSTANT, SPHERE_AREA, _check_dim, collide_batch
from kacflow.density import LOG_CLAMP, IsotropicDensity

# ------------------------------------------------------------------ scalars


def qbar(e: float, d: int) -> float:
    """Mean collision rate per particle per unit time at equilibrium:
    (1/2) * C_d * E|V - V*| for independent equilibrium velocities."""
    _check_dim(d)
    if e <= 0.0:
        raise ValueError("energy must be positive")
    mean_rel_speed = (
        math.sqrt(8.0 * e / d) * math.gamma((d + 1) / 2.0) / math.gamma(d / 2.0)
    )
    return 0.5 * ANGULAR_CONSTANT[d] * mean_rel_speed


def qbar_mc(e: float, d: int, n: int, rng: np.random.Generator):
    """Monte Carlo oracle for qbar: (C_d/2) * mean |V - V*| over n
    independent equilibrium pairs. Returns (value, stderr)."""
    from kacflow.core import sample_maxwellian

    v = sample_maxwellian(e, d, n, rng)
    w = sample_maxwellian(e, d, n, rng)
    rel = np.linalg.norm(v - w, axis=1)
    c = 0.5 * ANGULAR_CONSTANT[d]
    return c * float(rel.mean()), c * float(rel.std(ddof=1)) / math.sqrt(n)


def epsilon_of_q(q: float, e: float, d: int) -> float:
    """Energy of the equilibrium profile whose mean collision rate is q."""
    qb = qbar(e, d)
    if not 0.0 < q <= qb:
        raise ValueError(f"q must lie in (0, {qb}]")
    return e * (q / qb) ** 2

def j_e(q: float, e: float, d: int) -> float:
    """Rate function of downward collision-rate fluctuations:
    d * log(qbar/q) on (0, qbar], +inf elsewhere."""
    qb = qbar(e, d)
    if q <= 0.0 or q > qb:
        return math.inf
    return d * math.log(qb / q)


def poisson_bound(q: float, e: float, d: int) -> float:
    """Poissonian upper envelope q log(q/qbar) - q + qbar, valid for all
    q >= 0 (value qbar at q = 0)."""
    if q < 0.0:
        raise ValueError("q must be nonnegative")
    qb = qbar(e, d)
    if q == 0.0:
        return qb
    return q * math.log(q / qb) - q + qb


def i_minus(q: float, e: float, d: int, qhat: float) -> float:
    """Lower bound on the collision-rate rate function: zero up to the
    variational threshold qhat, Poissonian with rate qhat beyond."""
    if q < 0.0:
        raise ValueError("q must be nonnegative")
    if qhat < qbar(e, d):
        raise ValueError("qhat must be at least qbar")
    if q <= qhat:
        return 0.0
    return q * math.log(q / qhat) - q + qhat


def entropy_H(pi: IsotropicDensity, e: float) -> float:
    """Relative entropy of pi with respect to the equilibrium density of
    energy e: integral f log f dv + (d/2) (log(4 pi e / d) + 1).

    The additive constant is minus the equilibrium differential entropy,
    so the value is >= 0 with equality only at equilibrium, as long as
    pi has energy <= e."""
    d = pi.d
    return pi.entropy_lebesgue() + (d / 2.0) * (math.log(4.0 * math.pi * e / d) + 1.0)


# ------------------------------------------------- collision Monte Carlo


@dataclass
class CollisionFields:
    """Per-sample quantities for functionals of the form
    (1/2) * triple-integral f f* h B domega dv dv*.

    wt carries the importance weight times B times the half plus sphere
    factors, so that mean(wt * h) estimates the functional. r is the
    post/pre density ratio f' f*' / (f f*); logr_clamped uses densities
    clamped at 1e-300 so logarithms stay finite inside integrands."""

    wt: np.ndarray
    r: np.ndarray
    logr_clamped: np.ndarray
    pre_speeds: tuple
    post_speeds: tuple
    n: int
    clamped: int

    def mean_se(self, h=None):
        x = self.wt if h is None else self.wt * h
        m = float(x.mean())
        se = float(x.std(ddof=1)) / math.sqrt(self.n)
        return m, se


class CollisionSampler:
    """Common-random-number sampler for collision bilinears.

    Draws n pre-collision pairs from an isotropic Gaussian proposal and
    n scattering directions uniformly, once, at construction. Every
    fields() call reuses those draws, scaled to the requested proposal
    energy, so functional values are deterministic given the seed and
    vary smoothly with the density argument.
    """

    def __init__(self, d: int, n: int, seed):
        _check_dim(d)
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.d = d
        self.n = n
        self._z1 = rng.standard_normal((n, d))
        self._z2 = rng.standard_normal((n, d))
        from kacflow.core import sample_sphere

        self._omega = sample_sphere(d, n, rng)
        # component-assignment uniforms for the optional fat-tail mixture;
        # drawn last so single-component draws are unchanged for any seed
        self._u1 = rng.random(n)
        self._u2 = rng.random(n)

    def fields(
        self,
        pi: IsotropicDensity,
        proposal_e: float | None = None,
        tail_e: float | None = None,
        tail_beta: float = 0.0,
    ) -> CollisionFields:
        """Collision fields for pi under an isotropic Gaussian proposal.

        With tail_beta > 0 the proposal is the two-component mixture
        (1 - tail_beta) * M_{proposal_e} + tail_beta * M_{tail_e}: the
        fat component buys coverage of transient high-speed structure
        (lift carriers mid-relaxation) at a mild bulk variance cost."""
        if pi.d != self.d:
            raise ValueError("dimension mismatch")
        d = self.d
        if proposal_e is None:
            proposal_e = pi.energy()
        if proposal_e <= 0.0:
            raise ValueError("proposal energy must be positive")
        if not 0.0 <= tail_beta < 1.0:
            raise ValueError("tail fraction must lie in [0, 1)")
        sigma = math.sqrt(2.0 * proposal_e / d)
        if tail_beta > 0.0:
            if tail_e is None or tail_e <= 0.0:
                raise ValueError("tail component needs a positive energy")
            sig_hi = math.sqrt(2.0 * tail_e / d)
            s1 = np.where(self._u1 < tail_beta, sig_hi, sigma)
            s2 = np.where(self._u2 < tail_beta, sig_hi, sigma)
            v = s1[:, None] * self._z1
            vs = s2[:, None] * self._z2
        else:
            v = sigma * self._z1
            vs = sigma * self._z2
        omega = self._omega
        vp, vsp = collide_batch(v, vs, omega)
        b = 0.5 * np.abs(np.einsum("ij,ij->i", v - vs, omega))

        s_v = np.linalg.norm(v, axis=1)
        s_vs = np.linalg.norm(vs, axis=1)
        s_vp = np.linalg.norm(vp, axis=1)
        s_vsp = np.linalg.norm(vsp, axis=1)

        logf_v = pi.eval_log(s_v)
        logf_vs = pi.eval_log(s_vs)
        logf_vp = pi.eval_log(s_vp)
        logf_vsp = pi.eval_log(s_vsp)

        # proposal log density at the pre-collision pair (per-slot mixture)
        def _logq(s: np.ndarray) -> np.ndarray:
            base = -0.5 * d * math.log(2.0 * math.pi * sigma * sigma) - s**2 / (
                2.0 * sigma * sigma
            )
            if tail_beta == 0.0:
                return base
            hi = -0.5 * d * math.log(2.0 * math.pi * sig_hi * sig_hi) - s**2 / (
                2.0 * sig_hi * sig_hi
            )
            return np.logaddexp(
                math.log1p(-tail_beta) + base, math.log(tail_beta) + hi
            )

        logp = _logq(s_v) + _logq(s_vs)
        logw = logf_v + logf_vs - logp
        pre_ok = np.isfinite(logw)
        wt = np.zeros(self.n)
        wt[pre_ok] = np.exp(logw[pre_ok]) * b[pre_ok]
        wt *= 0.5 * SPHERE_AREA[d]

        with np.errstate(invalid="ignore"):
            logr = np.where(
                pre_ok, logf_vp + logf_vsp - logf_v - logf_vs, -np.inf
            )
        r = np.zeros(self.n)
        finite = np.isfinite(logr)
        with np.errstate(over="ignore"):
            r[finite] = np.exp(logr[finite])

        cl_v = np.maximum(logf_v, LOG_CLAMP)
        cl_vs = np.maximum(logf_vs, LOG_CLAMP)
        cl_vp = np.maximum(logf_vp, LOG_CLAMP)
        cl_vsp = np.maximum(logf_vsp, LOG_CLAMP)
        logr_clamped = cl_vp + cl_vsp - cl_v - cl_vs
        clamped = int(
            np.sum(((logf_vp <= LOG_CLAMP) | (logf_vsp <= LOG_CLAMP)) & pre_ok)
        )

        return CollisionFields(
            wt=wt,
            r=r,
            logr_clamped=logr_clamped,
            pre_speeds=(s_v, s_vs),
            post_speeds=(s_vp, s_vsp),
            n=self.n,
            clamped=clamped,
        )


def collision_rate_R2(pi, sampler: CollisionSampler, proposal_e=None):
    """(1/2) integral f f* B: mean collision rate under the product of pi
    with itself. Returns (value, stderr)."""
    return sampler.fields(pi, proposal_e).mean_se()


def collision_rate_R4(pi, sampler: CollisionSampler, proposal_e=None):
    """(1/2) integral sqrt(f f* f' f*') B: the square-root collision
    bilinear entering the variational bounds. Returns (value, stderr)."""
    f = sampler.fields(pi, proposal_e)
    return f.mean_se(np.sqrt(f.r))


def collision_bilinears(pi, sampler: CollisionSampler, proposal_e=None):
    """R2 and R4 from one shared set of draws. Returns dict with
    (value, stderr) pairs under keys 'R2' and 'R4'."""
    f = sampler.fields(pi, proposal_e)
    return {"R2": f.mean_se(), "R4": f.mean_se(np.sqrt(f.r))}


# ------------------------------------------------------------ flux specs


_FLUX_KINDS = ("gamma", "ref", "ref_rev", "pospart", "pospart_rev", "samples")


@dataclass
class FluxSpec:
    """Collision flux over one time interval, relative to the reference
    flux Q^pi = (1/2) f f* B of the interval density.

    kind selects the pointwise density rho = dQ/dQ^pi:
      gamma        exp(gamma) * sqrt(r)          (square-root tilt)
      ref          scale                          (scaled reference flux)
      ref_rev      scale * r                      (time-reversed reference)
      pospart      scale * max(1 - r, 0)          (downward excess flux)
      pospart_rev  scale * max(r - 1, 0)          (its time reversal)
      samples      weighted sample representation with per-sample rho

    with r = f' f*' / (f f*). For 'samples' the dict must hold arrays
    v, vstar, omega of shape (k, d) and weight, rho of shape (k,), the
    weights summing to the flux mass per unit time.
    """

    kind: str
    scale: float = 1.0
    gamma: float = 0.0
    samples: dict | None = None

    def __post_init__(self):
        if self.kind not in _FLUX_KINDS:
            raise ValueError(f"unknown flux kind {self.kind!r}")
        if self.kind == "samples" and self.samples is None:
            raise ValueError("samples flux needs a samples dict")
        if self.scale < 0.0:
            raise ValueError("scale must be nonnegative")

    def rho_of_r(self, r: np.ndarray) -> np.ndarray:
        if self.kind == "gamma":
            return math.exp(self.gamma) * np.sqrt(r)
        if self.kind == "ref":
            return np.full_like(r, self.scale)
        if self.kind == "ref_rev":
            return self.scale * r
        if self.kind == "pospart":
            return self.scale * np.clip(1.0 - r, 0.0, None)
        if self.kind == "pospart_rev":
            return self.scale * np.clip(r - 1.0, 0.0, None)
        raise ValueError("samples flux has no pointwise rho of r")

    def reversed(self) -> "FluxSpec":
        swap = {
            "gamma": "gamma",
            "ref": "ref_rev",
            "ref_rev": "ref",
            "pospart": "pospart_rev",
            "pospart_rev": "pospart",
        }
        if self.kind != "samples":
            return replace(self, kind=swap[self.kind])
        return self  # handled by time_reverse, which needs the density


def _xlogx(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    pos = x > 0.0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def flux_unit_rates(
    pi: IsotropicDensity,
    flux: FluxSpec,
    sampler: CollisionSampler,
    proposal_e: float | None = None,
    tail_e: float | None = None,
    tail_beta: float = 0.0,
) -> dict:
    """Per-unit-time functionals of a flux against its interval density:

      mass   Q(1)
      cost   integral dQ^pi [rho log rho - rho + 1]   (nonnegative)
      chain  Q(log r), the entropy-production pairing, with clamped logs

    each as a (value, stderr) pair.
    """
    if flux.kind == "samples":
        s = flux.samples
        w = np.asarray(s["weight"], dtype=float)
        rho = np.asarray(s["rho"], dtype=float)
        mass = float(w.sum())
        r2, r2_se = sampler.fields(pi, proposal_e, tail_e, tail_beta).mean_se()
        logrho = np.where(rho > 0.0, np.log(np.maximum(rho, 1e-300)), 0.0)
        cost = float(np.sum(w * (logrho - 1.0))) + r2
        logr = _sample_log_ratio(pi, s)
        chain = float(np.sum(w * logr))
        return {
            "mass": (mass, 0.0),
            "cost": (cost, r2_se),
            "chain": (chain, 0.0),
        }

    f = sampler.fields(pi, proposal_e, tail_e, tail_beta)
    if flux.kind == "gamma":
        # closed form: cost rate = q log(q / R4) - q + R2 at q = e^gamma R4
        r2, r2_se = f.mean_se()
        r4, r4_se = f.mean_se(np.sqrt(f.r))
        q = math.exp(flux.gamma) * r4
        mass_se = math.exp(flux.gamma) * r4_se
        cost = flux.gamma * q - q + r2
        cost_se = math.hypot(abs(flux.gamma - 1.0) * mass_se, r2_se)
        chain, chain_se = f.mean_se(math.exp(flux.gamma) * np.sqrt(f.r) * f.logr_clamped)
        return {
            "mass": (q, mass_se),
            "cost": (cost, cost_se),
            "chain": (chain, chain_se),
        }

    if flux.kind in ("ref_rev", "pospart_rev"):
        # Functionals of a reversed flux through the collision-swap
        # change of variables int g(r) dQ = int r g(1/r) dQ, which moves
        # every integrand onto the sampled support. The direct form
        # concentrates on rare underpopulated-to-populated pairs whose
        # weights carry r itself and is noise-dominated on transient
        # densities; the swapped form pays at most a log r factor.
        # Samples with r = 0 (flux leaving the density's support) keep
        # the direct integrand values: mass 0 and chain 0 (the reversed
        # flux carries nothing there), cost 1 (pure suppressed mass).
        s = flux.scale
        if s == 0.0:
            zero = np.zeros(f.n)
            return {
                "mass": (0.0, 0.0),
                "cost": f.mean_se(),
                "chain": f.mean_se(zero),
            }
        pos = f.r > 0.0
        slogs = s * math.log(s)
        if flux.kind == "ref_rev":
            mass_h = np.where(pos, s, 0.0)
            core = np.where(pos, slogs - s * f.logr_clamped - s, 0.0) + 1.0
            chain_h = np.where(pos, -s * f.logr_clamped, 0.0)
        else:
            u = np.clip(1.0 - f.r, 0.0, None)
            su = s * u
            mass_h = np.where(pos, su, 0.0)
            core = np.where(
                pos, _xlogx(su) - su * f.logr_clamped - su, 0.0
            ) + 1.0
            chain_h = np.where(pos, -su * f.logr_clamped, 0.0)
        return {
            "mass": f.mean_se(mass_h),
            "cost": f.mean_se(core),
            "chain": f.mean_se(chain_h),
        }
    rho = flux.rho_of_r(f.r)
    mass = f.mean_se(rho)
    cost = f.mean_se(_xlogx(rho) - rho + 1.0)
    chain = f.mean_se(rho * f.logr_clamped)
    return {"mass": mass, "cost": cost, "chain": chain}


def _sample_log_ratio(pi: IsotropicDensity, samples: dict) -> np.ndarray:
    v = np.asarray(samples["v"], dtype=float)
    vs = np.asarray(samples["vstar"], dtype=float)
    om = np.asarray(samples["omega"], dtype=float)
    vp, vsp = collide_batch(v, vs, om)
    cl = lambda x: np.maximum(pi.eval_log(np.linalg.norm(x, axis=1)), LOG_CLAMP)
    return cl(vp) + cl(vsp) - cl(v) - cl(vs)


# ------------------------------------------------------------------ paths


@dataclass
class PathDiscretization:
    """Piecewise representation of a density path with its collision flux.

    times has M+1 strictly increasing entries starting at 0; densities
    holds one IsotropicDensity per node; fluxes holds one FluxSpec per
    interval, understood per unit time relative to the interval density.
    Interval functionals average the two node densities (trapezoid)."""

    times: np.ndarray
    densities: list
    fluxes: list

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.ndim != 1 or self.times.shape[0] < 2:
            raise ValueError("need at least two time nodes")
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0.0):
            raise ValueError("times must increase strictly from 0")
        if len(self.densities) != self.times.shape[0]:
            raise ValueError("need one density per time node")
        if len(self.fluxes) != self.times.shape[0] - 1:
            raise ValueError("need one flux per interval")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def validate(self, e: float | None = None) -> None:
        for rho in self.densities:
            rho.validate(e)


def static_equilibrium_path(e: float, d: int, T: float, n_intervals: int = 1,
                            gamma: float = 0.0) -> PathDiscretization:
    """Constant equilibrium density carrying its square-root-tilted flux;
    gamma = 0 is the typical (zero-cost) stationary flux."""
    m = IsotropicDensity.maxwellian(e, d)
    times = np.linspace(0.0, T, n_intervals + 1)
    return PathDiscretization(
        times=times,
        densities=[m] * (n_intervals + 1),
        fluxes=[FluxSpec("gamma", gamma=gamma)] * n_intervals,
    )


def time_reverse(path: PathDiscretization) -> PathDiscretization:
    """Reverse the path in time, swapping pre and post collision roles
    in every flux. Reversing twice returns an equivalent path."""
    T = path.horizon
    times = T - path.times[::-1]
    times[0] = 0.0
    densities = list(path.densities[::-1])
    fluxes = []
    for m in range(len(path.fluxes) - 1, -1, -1):
        fl = path.fluxes[m]
        if fl.kind != "samples":
            fluxes.append(fl.reversed())
            continue
        s = fl.samples
        v = np.asarray(s["v"], dtype=float)
        vs = np.asarray(s["vstar"], dtype=float)
        om = np.asarray(s["omega"], dtype=float)
        vp, vsp = collide_batch(v, vs, om)
        # rho against the reversed reference: rho_hat(y) = r(y) rho(Yy)
        # evaluated at the swapped sample points; with the midpoint density
        # of the original interval
        mid = path.densities[m]
        logr_fwd = _sample_log_ratio(mid, s)
        rho = np.asarray(s["rho"], dtype=float)
        with np.errstate(over="ignore", under="ignore"):
            rho_rev = rho * np.exp(-logr_fwd)
        fluxes.append(
            FluxSpec(
                "samples",
                samples={
                    "v": vp,
                    "vstar": vsp,
                    "omega": om,
                    "weight": np.asarray(s["weight"], dtype=float).copy(),
                    "rho": rho_rev,
                },
            )
        )
    return PathDiscretization(times=times, densities=densities, fluxes=fluxes)


def path_cost_J(
    path: PathDiscretization,
    sampler: CollisionSampler | None = None,
    n_samples: int = 200_000,
    seed=0,
    proposal_e: float | None = None,
    tail_e: float | None = None,
    tail_beta: float = 0.0,
):
    """Dynamical cost of the path: sum over intervals of the per-unit-time
    integral dQ^pi [rho log rho - rho + 1], trapezoided over the interval
    end densities. Returns (cost, stderr)."""
    if sampler is None:
        sampler = CollisionSampler(path.densities[0].d, n_samples, seed)
    total = 0.0
    var = 0.0
    for m, fl in enumerate(path.fluxes):
        dt = path.times[m + 1] - path.times[m]
        c0, s0 = flux_unit_rates(
            path.densities[m], fl, sampler, proposal_e, tail_e, tail_beta
        )["cost"]
        c1, s1 = flux_unit_rates(
            path.densities[m + 1], fl, sampler, proposal_e, tail_e, tail_beta
        )["cost"]
        total += dt * 0.5 * (c0 + c1)
        var += (dt * 0.5) ** 2 * (s0**2 + s1**2)
    return total, math.sqrt(var)


def path_flux_mass(
    path: PathDiscretization,
    sampler: CollisionSampler | None = None,
    n_samples: int = 200_000,
    seed=0,
    proposal_e: float | None = None,
    tail_e: float | None = None,
    tail_beta: float = 0.0,
):
    """Total collision flux mass of the path. Returns (mass, stderr)."""
    if sampler is None:
        sampler = CollisionSampler(path.densities[0].d, n_samples, seed)
    total = 0.0
    var = 0.0
    for m, fl in enumerate(path.fluxes):
        dt = path.times[m + 1] - path.times[m]
        m0, s0 = flux_unit_rates(
            path.densities[m], fl, sampler, proposal_e, tail_e, tail_beta
        )["mass"]
        m1, s1 = flux_unit_rates(
            path.densities[m + 1], fl, sampler, proposal_e, tail_e, tail_beta
        )["mass"]
        total += dt * 0.5 * (m0 + m1)
        var += (dt * 0.5) ** 2 * (s0**2 + s1**2)
    return total, math.sqrt(var)


def chain_rule_residual(
    path: PathDiscretization,
    e: float,
    sampler: CollisionSampler | None = None,
    n_samples: int = 200_000,
    seed=0,
    proposal_e: float | None = None,
    tail_e: float | None = None,
    tail_beta: float = 0.0,
) -> dict:
    """Entropy chain rule along the path: the relative-entropy increment
    between the endpoints must equal the flux pairing Q(log r).

    Returns dict with keys dH, chain, residual (= |dH - chain|) and
    scale (the dominant magnitude used for relative comparisons)."""
    if sampler is None:
        sampler = CollisionSampler(path.densities[0].d, n_samples, seed)
    dh = entropy_H(path.densities[-1], e) - entropy_H(path.densities[0], e)
    chain = 0.0
    for m, fl in enumerate(path.fluxes):
        dt = path.times[m + 1] - path.times[m]
        c0, _ = flux_unit_rates(
            path.densities[m], fl, sampler, proposal_e, tail_e, tail_beta
        )["chain"]
        c1, _ = flux_unit_rates(
            path.densities[m + 1], fl, sampler, proposal_e, tail_e, tail_beta
        )["chain"]
        chain += dt * 0.5 * (c0 + c1)
    scale = max(abs(dh), abs(chain), 0.1)
    return {"dH": dh, "chain": chain, "residual": abs(dh - chain), "scale": scale}


# ------------------------------------------------------------- bounds table


@dataclass
class RateBoundsTable:
    """Tabulated bounds on the collision-rate rate function."""

    q: np.ndarray
    i_minus: np.ndarray
    i_plus: np.ndarray
    poisson: np.ndarray
    j: np.ndarray
    e: float
    d: int
    qbar: float
    qhat: float
    qhat_se: float = 0.0
    i_plus_se: np.ndarray | None = None

    CSV_HEADER = "q,i_minus,i_plus,poisson,j_e"

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        for name in ("i_minus", "i_plus", "poisson", "j"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))

    def validate(self, tol: float = 0.0) -> None:
        if np.any(self.q <= 0.0):
            raise ValueError("bounds table is restricted to q > 0")
        if np.any(self.i_minus > self.i_plus + tol):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(self.i_plus > self.poisson + tol):
            raise ValueError("upper bound exceeds the Poissonian envelope")

    def to_csv(self, path, header_comment: str | None = None) -> None:
        lines = []
        if header_comment:
            lines.append(f"# {header_comment}")
        lines.append(self.CSV_HEADER)
        for k in range(self.q.shape[0]):
            jk = float(self.j[k])
            jtxt = "inf" if math.isinf(jk) else repr(jk)
            lines.append(
                f"{float(self.q[k])!r},{float(self.i_minus[k])!r},"
                f"{float(self.i_plus[k])!r},{float(self.poisson[k])!r},{jtxt}"
            )
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path, e: float, d: int, qbar_value: float, qhat: float):
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#") or line.startswith("q,"):
                    continue
                rows.append([float(x) for x in line.split(",")])
        arr = np.asarray(rows, dtype=float)
        return cls(
            q=arr[:, 0],
            i_minus=arr[:, 1],
            i_plus=arr[:, 2],
            poisson=arr[:, 3],
            j=arr[:, 4],
            e=e,
            d=d,
            qbar=qbar_value,
            qhat=qhat,
        )
