"""Isotropic velocity densities tabulated on a radial speed grid.

A density is stored as node values f_k at speeds r_0 < ... < r_K and is
log-linearly interpolated between nodes, constant below r_0 and zero
above r_K. All functionals (mass, energy, entropy, radial integrals
against test functions) integrate that interpolant with fixed-order
Gauss-Legendre quadrature per segment, which is effectively exact for
exponential-times-polynomial integrands at the default grid resolution.

Node values below 1e-300 are clamped before taking logarithms; the
interpolant treats them as exact zeros when evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from kacflow.core import SPHERE_AREA, _check_dim

DENSITY_CLAMP = 1e-300
LOG_CLAMP = math.log(DENSITY_CLAMP)

_GL_ORDER = 16
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_ORDER)

_MASS_TOL = 1e-6
_ENERGY_TOL = 1e-6

# default radial extent for a thermal density of energy e: covers the
# equilibrium tail down to exp(-d * r^2 / (4e)) ~ 1e-27 or less
_RMAX_FACTOR = 6.5
_DEFAULT_NODES = 512


def default_rmax(e: float) -> float:
    return _RMAX_FACTOR * math.sqrt(2.0 * e)


@dataclass
class IsotropicDensity:
    """Probability density on R^d depending on |v| only, on a radial grid."""

    r: np.ndarray
    f: np.ndarray
    d: int
    # optional closed-form log-density; when set, pointwise evaluation
    # bypasses grid interpolation (the grid still drives quadrature)
    log_eval: object = None
    _logf: np.ndarray = field(init=False, repr=False)
    _mass: float | None = field(default=None, init=False, repr=False)
    _energy: float | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        _check_dim(self.d)
        if self.r.ndim != 1 or self.r.shape != self.f.shape:
            raise ValueError("r and f must be 1-d arrays of equal length")
        if self.r.shape[0] < 2:
            raise ValueError("need at least two radial nodes")
        if np.any(np.diff(self.r) <= 0.0) or self.r[0] < 0.0:
            raise ValueError("r must be strictly increasing and nonnegative")
        if np.any(self.f < 0.0) or not np.all(np.isfinite(self.f)):
            raise ValueError("f must be finite and nonnegative")
        self._logf = np.log(np.maximum(self.f, DENSITY_CLAMP))

    # ------------------------------------------------------------ evaluation

    def eval_log(self, speeds) -> np.ndarray:
        """log f at the given speeds; -inf outside the support."""
        speeds = np.asarray(speeds, dtype=float)
        if self.log_eval is not None:
            return np.asarray(self.log_eval(speeds), dtype=float)
        out = np.interp(speeds, self.r, self._logf, left=self._logf[0])
        out = np.where(speeds > self.r[-1], -np.inf, out)
        # clamped nodes represent exact zeros
        return np.where(out <= LOG_CLAMP, -np.inf, out)

    def eval(self, speeds) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.eval_log(speeds))

    # ------------------------------------------------------------ quadrature

    def _quad_nodes(self):
        a = self.r[:-1]
        b = self.r[1:]
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        nodes = mid[:, None] + half[:, None] * _GL_X[None, :]
        weights = half[:, None] * _GL_W[None, :]
        return nodes.ravel(), weights.ravel()

    def integrate(self, phi=None) -> float:
        """integral of phi(|v|) f(v) dv; phi defaults to 1."""
        nodes, weights = self._quad_nodes()
        vals = self.eval(nodes) * nodes ** (self.d - 1)
        if phi is not None:
            vals = vals * phi(nodes)
        return SPHERE_AREA[self.d] * float(np.sum(weights * vals))

    def mass(self) -> float:
        if self._mass is None:
            self._mass = self.integrate()
        return self._mass

    def energy(self) -> float:
        if self._energy is None:
            self._energy = self.integrate(lambda r: 0.5 * r * r)
        return self._energy

    def entropy_lebesgue(self) -> float:
        """integral of f log f dv over the support."""
        nodes, weights = self._quad_nodes()
        logf = self.eval_log(nodes)
        mask = np.isfinite(logf)
        vals = np.zeros_like(nodes)
        vals[mask] = np.exp(logf[mask]) * logf[mask] * nodes[mask] ** (self.d - 1)
        return SPHERE_AREA[self.d] * float(np.sum(weights * vals))

    def tv_distance(self, other: "IsotropicDensity") -> float:
        """total variation distance, in [0, 2] for measures of mass <= 1
        each; equals (1/2) integral |f - g| for probability densities."""
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        grid = np.union1d(self.r, other.r)
        a, b = grid[:-1], grid[1:]
        half = 0.5 * (b - a)
        nodes = (0.5 * (a + b))[:, None] + half[:, None] * _GL_X[None, :]
        weights = (half[:, None] * _GL_W[None, :]).ravel()
        nodes = nodes.ravel()
        diff = np.abs(self.eval(nodes) - other.eval(nodes)) * nodes ** (self.d - 1)
        return 0.5 * SPHERE_AREA[self.d] * float(np.sum(weights * diff))

    # ------------------------------------------------------------ transforms

    def normalized(self) -> "IsotropicDensity":
        m = self.mass()
        fn = self.log_eval
        new_log = None if fn is None else (lambda s, _fn=fn, _c=math.log(m): _fn(s) - _c)
        return IsotropicDensity(self.r, self.f / m, self.d, log_eval=new_log)

    def scaled(self, beta: float) -> "IsotropicDensity":
        """Density of beta * V when V has this density: mass preserved,
        energy multiplied by beta^2."""
        if beta <= 0.0:
            raise ValueError("beta must be positive")
        fn = self.log_eval
        new_log = None
        if fn is not None:
            c = self.d * math.log(beta)
            new_log = lambda s, _fn=fn, _b=beta, _c=c: _fn(np.asarray(s) / _b) - _c
        return IsotropicDensity(
            self.r * beta, self.f / beta**self.d, self.d, log_eval=new_log
        )

    def projected_to_energy(self, e_cap: float) -> "IsotropicDensity":
        """Rescale speeds downward if needed so the energy is <= e_cap."""
        en = self.energy()
        if en <= e_cap:
            return self
        return self.scaled(math.sqrt(e_cap / en))

    # ------------------------------------------------------------ sampling

    def sample_speeds(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n speeds by inverse transform on a refined grid."""
        sub = np.linspace(0.0, 1.0, 8, endpoint=False)[None, :]
        dense = (self.r[:-1, None] + np.diff(self.r)[:, None] * sub).ravel()
        dense = np.append(dense, self.r[-1])
        pdf = self.eval(dense) * dense ** (self.d - 1)
        cdf = np.concatenate(
            [[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1]) * np.diff(dense))]
        )
        if cdf[-1] <= 0.0:
            raise ValueError("cannot sample from a zero density")
        cdf /= cdf[-1]
        u = rng.random(n)
        return np.interp(u, cdf, dense)

    def sample_velocities(self, n: int, rng: np.random.Generator) -> np.ndarray:
        from kacflow.core import sample_sphere

        speeds = self.sample_speeds(n, rng)
        return speeds[:, None] * sample_sphere(self.d, n, rng)

    # ------------------------------------------------------------ validation

    def validate(self, e: float | None = None) -> None:
        m = self.mass()
        if abs(m - 1.0) > _MASS_TOL:
            raise ValueError(f"mass {m!r} is not 1 within {_MASS_TOL}")
        if e is not None and self.energy() > e + _ENERGY_TOL:
            raise ValueError(f"energy {self.energy()!r} exceeds {e!r}")

    # ------------------------------------------------------------ builders

    @classmethod
    def from_speed_function(
        cls,
        fn,
        d: int,
        r_max: float,
        n_nodes: int = _DEFAULT_NODES,
        normalize: bool = True,
    ) -> "IsotropicDensity":
        r = np.linspace(0.0, r_max, n_nodes + 1)
        f = np.asarray(fn(r), dtype=float)
        f = np.maximum(f, 0.0)
        out = cls(r, f, d)
        return out.normalized() if normalize else out

    @classmethod
    def maxwellian(
        cls, e: float, d: int, n_nodes: int = _DEFAULT_NODES, r_max: float | None = None
    ) -> "IsotropicDensity":
        from kacflow.core import Maxwellian

        m = Maxwellian(e, d)
        if r_max is None:
            r_max = default_rmax(e)
        out = cls.from_speed_function(m.density_at_speed, d, r_max, n_nodes)
        return IsotropicDensity(out.r, out.f, d, log_eval=m.log_density_at_speed)
