"""Shared fixtures.

The expensive artifacts (optimizer runs, replica ensembles, control
paths) are session-scoped and lazily built, so unit-test runs that do
not request them stay fast. Each heavy fixture returns a dict carrying
the artifact plus the wall-clock seconds it took to build, so the
acceptance tests can account fixture time against their runtime budget.
"""

import math
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "package",
    deadline=None,
    derandomize=True,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("package")

MASTER_SEED = 20260821
E, D = 1.0, 3


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def qhat_opt():
    """Family-restricted supremum of the geometric-mean collision rate."""
    from kacflow.optimize import maximize_R4
    from kacflow.seeding import OPTIMIZER, rng_for

    res, secs = timed(
        maximize_R4, E, D, budget=600, rng=rng_for(MASTER_SEED, OPTIMIZER, 0)
    )
    return {"result": res, "seconds": secs}


@pytest.fixture(scope="session")
def lln_replicas():
    """Sixteen independent collision-rate measurements at N=1e4, T=10."""
    from kacflow.seeding import LLN_REPLICA, rng_for
    from kacflow.simulate import SimConfig, simulate

    def run_all():
        qs = []
        for k in range(16):
            seed = int(rng_for(MASTER_SEED, LLN_REPLICA, k).integers(2**63))
            cfg = SimConfig(
                N=10_000, T=10.0, d=D, e=E, seed=seed, record_events=False
            )
            qs.append(simulate(cfg).flow.q)
        return np.asarray(qs)

    qs, secs = timed(run_all)
    return {"qs": qs, "seconds": secs}


@pytest.fixture(scope="session")
def iplus_grid(qhat_opt):
    """Static upper bound on the eight-point rate grid, 400 evals each."""
    from kacflow.functionals import qbar
    from kacflow.optimize import minimize_i_plus
    from kacflow.seeding import OPTIMIZER, rng_for

    qb = qbar(E, D)
    q_grid = np.linspace(qb, 4.0 * qb, 8)

    def run_all():
        out = []
        for k, q in enumerate(q_grid):
            out.append(
                minimize_i_plus(
                    float(q), E, D, budget=400,
                    rng=rng_for(MASTER_SEED, OPTIMIZER, k + 1),
                )
            )
        return out

    results, secs = timed(run_all)
    return {"q_grid": q_grid, "results": results, "seconds": secs}


@pytest.fixture(scope="session")
def cloning_sweep():
    """Tilted-ensemble generating-function estimates for the trend test."""
    from kacflow.cloning import estimate_scgf
    from kacflow.seeding import CLONING, rng_for

    def run_all():
        sub = {}
        for k, horizon in enumerate((5.0, 10.0, 20.0)):
            seed = int(rng_for(MASTER_SEED, CLONING, k).integers(2**62))
            est = estimate_scgf(
                [-0.5], N=50, T=horizon, M=200, e=E, d=D, seed=seed,
                n_repetitions=3,
            )
            sub[horizon] = est.points[0]
        seed = int(rng_for(MASTER_SEED, CLONING, 3).integers(2**62))
        sup = estimate_scgf(
            [0.5], N=50, T=5.0, M=200, e=E, d=D, seed=seed, n_repetitions=3
        ).points[0]
        return sub, sup

    (sub, sup), secs = timed(run_all)
    return {"subtypical": sub, "supertypical": sup, "seconds": secs}


def _build_two_sided(e2_factor: float, n_snapshots: int):
    from kacflow.control import build_two_sided_path
    from kacflow.density import IsotropicDensity

    pi1 = IsotropicDensity.maxwellian(0.5 * E, D)
    pi2 = IsotropicDensity.maxwellian(e2_factor * E, D)
    return build_two_sided_path(
        pi1, pi2, e=E, T=2.0, kappa=None,
        n_particles=400_000, n_samples=100_000, seed=5,
        n_snapshots=n_snapshots,
    )


def _measure_path(cp):
    from kacflow.control import balance_residual
    from kacflow.functionals import (
        chain_rule_residual,
        entropy_H,
        path_cost_J,
        path_flux_mass,
        time_reverse,
    )

    sampler = cp.sampler()
    prop = cp.proposal()
    H0 = entropy_H(cp.path.densities[0], cp.e)
    HT = entropy_H(cp.path.densities[-1], cp.e)
    J, J_se = path_cost_J(cp.path, sampler=sampler, **prop)
    Jrev, Jrev_se = path_cost_J(time_reverse(cp.path), sampler=sampler, **prop)
    ch = chain_rule_residual(cp.path, cp.e, sampler=sampler, **prop)
    mass, mass_se = path_flux_mass(cp.path, sampler=sampler, **prop)
    balance = balance_residual(cp, sampler=sampler)
    chain = ch["chain"]
    return {
        "H0": H0, "HT": HT, "J": J, "J_se": J_se,
        "Jrev": Jrev, "Jrev_se": Jrev_se, "chain": chain,
        "dH": ch["dH"], "mass": mass, "mass_se": mass_se,
        "balance": balance,
        "reversal_residual": abs((H0 + J) - (HT + Jrev)),
        "reversal_dominant": max(abs(H0 + J), abs(HT + Jrev)),
        "chain_residual": abs((Jrev - J) + chain),
        "chain_dominant": max(abs(Jrev - J), abs(chain)),
    }


@pytest.fixture(scope="session")
def control_equilibrating_fine():
    """Two-sided path M_{e/2} -> M_e on the fine time grid, measured."""
    def build():
        cp = _build_two_sided(1.0, 48)
        return cp, _measure_path(cp)

    (cp, meas), secs = timed(build)
    return {"cp": cp, "meas": meas, "seconds": secs}


@pytest.fixture(scope="session")
def control_equilibrating_coarse():
    """Same endpoints on a twice-coarser time grid, for the refinement check."""
    def build():
        cp = _build_two_sided(1.0, 24)
        return cp, _measure_path(cp)

    (cp, meas), secs = timed(build)
    return {"cp": cp, "meas": meas, "seconds": secs}


@pytest.fixture(scope="session")
def control_asymmetric():
    """Two-sided path between two subcritical energies, M_{e/2} -> M_{0.8e}."""
    def build():
        cp = _build_two_sided(0.8, 48)
        return cp, _measure_path(cp)

    (cp, meas), secs = timed(build)
    return {"cp": cp, "meas": meas, "seconds": secs}


@pytest.fixture(scope="session")
def relaxation_trace():
    """DSMC relaxation of the lifted half-energy Maxwellian, 1e5 particles."""
    from kacflow.control import relax
    from kacflow.density import IsotropicDensity

    pi0 = IsotropicDensity.maxwellian(0.5 * E, D)
    trace, secs = timed(
        relax, pi0, e=E, tau_max=2.5, n_particles=100_000,
        n_snapshots=24, seed=17,
    )
    return {"trace": trace, "seconds": secs}
