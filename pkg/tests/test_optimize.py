"""Derivative-free bound optimization: parametric density family,
anchored Monte Carlo objective, and the two variational searches."""

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kacflow.functionals import poisson_bound, qbar
from kacflow.optimize import (
    AnchoredBilinears,
    DensityFamily,
    OptResult,
    maximize_R4,
    minimize_i_plus,
    static_cost,
)

E, D = 1.0, 3
QB = qbar(E, D)


def test_family_parameter_layout():
    fam = DensityFamily(e=E, d=D, m=3, n_tilt=0)
    assert fam.n_params == 5
    fam_t = DensityFamily(e=E, d=D, m=1, n_tilt=9)
    assert fam_t.n_params == 10
    with pytest.raises(ValueError):
        DensityFamily(e=E, d=D, m=0)
    with pytest.raises(ValueError):
        DensityFamily(e=E, d=D, m=2, n_tilt=1)
    with pytest.raises(ValueError):
        fam.split(np.zeros(3))


def test_zero_theta_realizes_equilibrium():
    for fam in (DensityFamily(E, D, m=3, n_tilt=0), DensityFamily(E, D, m=1, n_tilt=9)):
        pi = fam.realize(fam.initial_theta())
        pi.validate(e=E)
        assert pi.energy() == pytest.approx(E, abs=1e-6)


@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_family_respects_energy_cap(seed):
    fam = DensityFamily(e=E, d=D, m=3, n_tilt=0)
    theta = 1.5 * np.random.default_rng(seed).standard_normal(fam.n_params)
    pi = fam.realize(theta)
    assert pi.energy() <= E + 1e-4
    assert pi.mass() == pytest.approx(1.0, abs=1e-6)


def test_tilted_family_keeps_energy_cap():
    fam = DensityFamily(e=E, d=D, m=1, n_tilt=9)
    rng = np.random.default_rng(7)
    for _ in range(10):
        pi = fam.realize(0.8 * rng.standard_normal(fam.n_params))
        assert pi.energy() <= E + 1e-4


def test_anchored_objective_is_deterministic():
    fam = DensityFamily(E, D, m=3, n_tilt=0)
    pi = fam.realize(np.array([0.3, -0.2, 0.1, -0.5, 0.4]))
    a = AnchoredBilinears(E, D, 50_000, 123).estimate(pi)
    b = AnchoredBilinears(E, D, 50_000, 123).estimate(pi)
    assert a["r2"] == b["r2"] and a["r4"] == b["r4"]
    assert a["r4"] <= a["r2"] + 3.0 * (a["r4_se"] + a["r2_se"])


def test_static_cost_formula():
    est = {"r2": 3.0, "r4": 2.0}
    q = 4.0
    assert static_cost(q, est) == pytest.approx(
        q * math.log(q / 2.0) - q + 3.0, rel=1e-13
    )


def test_maximize_r4_never_below_equilibrium_value():
    res = maximize_R4(
        E, D, budget=120, rng=np.random.default_rng(1),
        n_samples=30_000, n_final=120_000,
    )
    assert res.value >= QB - 1e-12
    assert res.n_evaluations <= 130
    assert res.stderr >= 0.0
    payload = json.dumps(res.to_dict())
    assert "value" in json.loads(payload)


def test_maximize_r4_rejects_tiny_budget():
    with pytest.raises(ValueError):
        maximize_R4(E, D, budget=50)


def test_minimize_i_plus_zero_at_typical_rate():
    res = minimize_i_plus(
        QB, E, D, budget=100, rng=np.random.default_rng(2),
        n_samples=30_000, n_final=60_000,
    )
    assert abs(res.value) <= max(3.0 * res.stderr, 1e-12)


def test_minimize_i_plus_between_zero_and_poisson():
    q = 2.0 * QB
    res = minimize_i_plus(
        q, E, D, budget=100, rng=np.random.default_rng(3),
        n_samples=30_000, n_final=60_000,
    )
    assert res.value >= -3.0 * res.stderr
    assert res.value <= poisson_bound(q, E, D) + max(3.0 * res.stderr, 1e-12)
    assert res.extras["q"] == q


def test_minimize_i_plus_rejects_nonpositive_rate():
    with pytest.raises(ValueError):
        minimize_i_plus(0.0, E, D)
