"""Microcanonical hard-sphere collision dynamics and collision-count
large-deviation machinery.

The package is organized bottom-up:

  core        velocity-space primitives: pairwise elastic scattering,
              collision kernel, equilibrium and shell sampling
  simulate    exact event-driven simulation of the mean-field collision
              process on the constant-energy, zero-momentum shell
  density     isotropic velocity densities on a radial grid
  functionals mean collision rate, entropy, rate-function bounds,
              collision-bilinear functionals, path costs
  optimize    derivative-free search over density families for the
              variational rate bounds
  cloning     population-dynamics estimation of the scaled cumulant
              generating function of the collision count
  control     relaxation traces and constructive low-cost paths that
              realize a prescribed total collision flux
  cli         batch experiment driver
"""

from kacflow.core import (
    ConservedQuantities,
    Maxwellian,
    ParticleState,
    collide,
    kernel_B,
    pair_rate,
    sample_maxwellian,
    sample_microcanonical,
    sample_scatter_direction,
)
from kacflow.density import IsotropicDensity
from kacflow.functionals import (
    entropy_H,
    epsilon_of_q,
    i_minus,
    j_e,
    poisson_bound,
    qbar,
)

__version__ = "0.1.0"

__all__ = [
    "ConservedQuantities",
    "IsotropicDensity",
    "Maxwellian",
    "ParticleState",
    "collide",
    "entropy_H",
    "epsilon_of_q",
    "i_minus",
    "j_e",
    "kernel_B",
    "pair_rate",
    "poisson_bound",
    "qbar",
    "sample_maxwellian",
    "sample_microcanonical",
    "sample_scatter_direction",
]
