"""Velocity-space primitives for the hard-sphere collision model.

Conventions fixed here and used everywhere else in the package:

* scattering directions live on the unit sphere S^{d-1} carrying its
  *unnormalized* surface measure (total mass 2*pi for d=2, 4*pi for d=3);
* the collision kernel is B(v, w, omega) = |(v - w) . omega| / 2;
* integrating B over the sphere gives pair_rate = C_d * |v - w| with
  C_2 = 2 and C_3 = pi;
* the equilibrium density at mean kinetic energy e has per-component
  variance 2*e/d, so the mean of |v|^2/2 is exactly e.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SUPPORTED_DIMS = (2, 3)

# (1/2) * integral_{S^{d-1}} |u . omega| domega for a unit vector u,
# unnormalized surface measure.
ANGULAR_CONSTANT = {2: 2.0, 3: math.pi}

# total surface measure of S^{d-1}
SPHERE_AREA = {2: 2.0 * math.pi, 3: 4.0 * math.pi}

_UNIT_TOL = 1e-12


def _check_dim(d: int) -> None:
    if d not in SUPPORTED_DIMS:
        raise ValueError(f"dimension must be one of {SUPPORTED_DIMS}, got {d}")


def _check_unit(omega: np.ndarray) -> None:
    nrm = float(np.linalg.norm(omega))
    if abs(nrm - 1.0) > _UNIT_TOL:
        raise ValueError(f"omega must be a unit vector, |omega| = {nrm!r}")


def collide(v, w, omega):
    """Elastic pairwise scattering along the direction omega.

    Returns (v', w') with

        v' = v + (omega . (w - v)) omega
        w' = w - (omega . (w - v)) omega

    The map conserves v + w and |v|^2 + |w|^2 exactly (up to rounding)
    and is an involution: applying it twice with the same omega returns
    the input pair.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    omega = np.asarray(omega, dtype=float)
    _check_unit(omega)
    transfer = float(np.dot(omega, w - v))
    return v + transfer * omega, w - transfer * omega


def collide_batch(v, w, omega):
    """Vectorized collide for arrays of shape (n, d). No unit check."""
    transfer = np.einsum("ij,ij->i", omega, w - v)[:, None]
    return v + transfer * omega, w - transfer * omega


def kernel_B(v, w, omega) -> float:
    """Hard-sphere collision kernel B = |(v - w) . omega| / 2."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    omega = np.asarray(omega, dtype=float)
    _check_unit(omega)
    return 0.5 * abs(float(np.dot(v - w, omega)))


def pair_rate(v, w) -> float:
    """Total collision rate of the pair (v, w): the kernel integrated
    over all scattering directions, C_d * |v - w|."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    d = v.shape[-1]
    _check_dim(d)
    return ANGULAR_CONSTANT[d] * float(np.linalg.norm(v - w))


def sample_sphere(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """n draws from the uniform distribution on S^{d-1}, shape (n, d)."""
    _check_dim(d)
    z = rng.standard_normal((n, d))
    nrm = np.linalg.norm(z, axis=1, keepdims=True)
    # a zero draw has probability 0; regenerate defensively if it happens
    bad = nrm[:, 0] == 0.0
    while np.any(bad):
        z[bad] = rng.standard_normal((int(bad.sum()), d))
        nrm = np.linalg.norm(z, axis=1, keepdims=True)
        bad = nrm[:, 0] == 0.0
    return z / nrm


def sample_scatter_direction(v, w, rng: np.random.Generator) -> np.ndarray:
    """One scattering direction drawn proportionally to the kernel,
    i.e. with density |u . omega| (u the unit relative velocity) with
    respect to the uniform measure on the sphere.

    Rejection sampling against the uniform proposal; the acceptance
    probability is |u . omega| <= 1.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    rel = v - w
    speed = float(np.linalg.norm(rel))
    if speed == 0.0:
        raise ValueError("scattering direction undefined for v == w")
    u = rel / speed
    d = u.shape[0]
    _check_dim(d)
    while True:
        omega = sample_sphere(d, 1, rng)[0]
        if rng.random() < abs(float(np.dot(u, omega))):
            return omega


def sample_scatter_directions(v, w, n: int, rng: np.random.Generator):
    """Batch version of sample_scatter_direction.

    Returns (omegas, n_proposals) where omegas has shape (n, d) and
    n_proposals counts every candidate drawn, accepted or not, so the
    empirical acceptance rate n / n_proposals can be tested.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    rel = v - w
    speed = float(np.linalg.norm(rel))
    if speed == 0.0:
        raise ValueError("scattering direction undefined for v == w")
    u = rel / speed
    d = u.shape[0]
    _check_dim(d)
    out = np.empty((n, d))
    filled = 0
    proposals = 0
    while filled < n:
        block = max(2 * (n - filled), 64)
        cand = sample_sphere(d, block, rng)
        acc = rng.random(block) < np.abs(cand @ u)
        take = cand[acc][: n - filled]
        # proposals consumed: all of them if we keep the whole accepted
        # set, otherwise only up to the candidate that filled the batch
        if acc.sum() <= n - filled:
            proposals += block
        else:
            idx = np.nonzero(acc)[0][n - filled - 1]
            proposals += int(idx) + 1
        out[filled : filled + take.shape[0]] = take
        filled += take.shape[0]
    return out, proposals


def sample_maxwellian(e: float, d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """n velocities from the centered Gaussian with mean kinetic energy e
    per particle (per-component variance 2*e/d), shape (n, d)."""
    _check_dim(d)
    if e <= 0.0:
        raise ValueError("energy must be positive")
    return math.sqrt(2.0 * e / d) * rng.standard_normal((n, d))


@dataclass(frozen=True)
class Maxwellian:
    """Equilibrium velocity density at mean kinetic energy e in dimension d."""

    e: float
    d: int

    def __post_init__(self):
        _check_dim(self.d)
        if self.e <= 0.0:
            raise ValueError("energy must be positive")

    @property
    def component_variance(self) -> float:
        return 2.0 * self.e / self.d

    def density(self, v) -> np.ndarray:
        """Density at velocity v (last axis is the component axis)."""
        v = np.asarray(v, dtype=float)
        r2 = np.sum(v * v, axis=-1)
        return self.density_at_speed(np.sqrt(r2))

    def density_at_speed(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        d, e = self.d, self.e
        norm = (d / (4.0 * math.pi * e)) ** (d / 2.0)
        return norm * np.exp(-d * r * r / (4.0 * e))

    def log_density_at_speed(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        d, e = self.d, self.e
        return (d / 2.0) * math.log(d / (4.0 * math.pi * e)) - d * r * r / (4.0 * e)


@dataclass(frozen=True)
class ConservedQuantities:
    """Per-particle conserved quantities of a velocity ensemble."""

    energy: float
    momentum: np.ndarray

    @classmethod
    def from_velocities(cls, velocities: np.ndarray) -> "ConservedQuantities":
        velocities = np.asarray(velocities, dtype=float)
        energy = 0.5 * float(np.mean(np.sum(velocities * velocities, axis=1)))
        momentum = velocities.mean(axis=0)
        return cls(energy=energy, momentum=momentum)


_ENERGY_RTOL = 1e-10
_MOMENTUM_ATOL = 1e-10


@dataclass
class ParticleState:
    """N velocities on the shell of mean energy e and zero total momentum."""

    velocities: np.ndarray
    e: float

    def __post_init__(self):
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.velocities.ndim != 2:
            raise ValueError("velocities must have shape (N, d)")
        _check_dim(self.d)
        if self.N < 2:
            raise ValueError("need at least two particles")

    @property
    def N(self) -> int:
        return self.velocities.shape[0]

    @property
    def d(self) -> int:
        return self.velocities.shape[1]

    def conserved(self) -> ConservedQuantities:
        return ConservedQuantities.from_velocities(self.velocities)

    def shell_violation(self) -> float:
        """Max of relative energy error and absolute momentum components."""
        c = self.conserved()
        err_e = abs(c.energy - self.e) / self.e
        err_p = float(np.max(np.abs(c.momentum)))
        return max(err_e, err_p)

    def validate(self) -> None:
        c = self.conserved()
        if abs(c.energy - self.e) > _ENERGY_RTOL * self.e:
            raise ValueError(
                f"mean energy {c.energy!r} deviates from shell value {self.e!r}"
            )
        if np.any(np.abs(c.momentum) > _MOMENTUM_ATOL):
            raise ValueError(f"mean momentum {c.momentum!r} is not zero")

    def copy(self) -> "ParticleState":
        return ParticleState(self.velocities.copy(), self.e)


def sample_microcanonical(
    e: float, d: int, N: int, rng: np.random.Generator
) -> ParticleState:
    """Uniform sample from the shell of mean energy e and zero momentum.

    Draw N equilibrium velocities, subtract the empirical mean, rescale
    to mean energy exactly e. Spherical symmetry of the Gaussian makes
    the result exactly uniform on the shell.
    """
    _check_dim(d)
    if N < 2:
        raise ValueError("need at least two particles")
    if e <= 0.0:
        raise ValueError("energy must be positive")
    v = sample_maxwellian(e, d, N, rng)
    v = center_and_rescale(v, e)
    return ParticleState(v, e)


def center_and_rescale(velocities: np.ndarray, e: float) -> np.ndarray:
    """Project velocities onto the zero-momentum, mean-energy-e shell."""
    v = np.asarray(velocities, dtype=float)
    v = v - v.mean(axis=0)
    energy = 0.5 * float(np.mean(np.sum(v * v, axis=1)))
    if energy == 0.0:
        raise ValueError("cannot rescale an all-zero velocity set")
    return v * math.sqrt(e / energy)
