import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import gamma

from nlsgraph.ode import (
    loop_slope,
    mass_threshold,
    measured_period,
    ode_energy,
    orbit_mass,
    period,
    period_constant,
    period_table_csv,
    periodic_orbit,
    tadpole_solution,
)


def test_period_constant_closed_forms():
    assert period_constant(2.0) == pytest.approx(2 * math.pi, rel=1e-12)
    beta = math.sqrt(32.0) * gamma(0.25) * gamma(0.5) / (4.0 * gamma(0.75))
    assert period_constant(4.0) == pytest.approx(beta, rel=1e-10)


def test_period_rejects_bad_input():
    with pytest.raises(ValueError):
        period_constant(1.5)
    with pytest.raises(ValueError):
        period(-1.0, 1.0, 4.0)


@pytest.mark.parametrize("p", [3.0, 6.0, 10.0])
def test_measured_period_matches_law(p):
    assert measured_period(0.7, 1.3, p) == pytest.approx(period(0.7, 1.3, p), rel=1e-8)


@settings(max_examples=20, deadline=None)
@given(p=st.floats(2.5, 10), alpha=st.floats(0.1, 10), u0=st.floats(0.2, 3), s=st.floats(0.5, 2))
def test_period_scaling(p, alpha, u0, s):
    # tau(s u0) = s^((2-p)/2) tau(u0); tau(alpha s) = tau(alpha) / sqrt(s)
    assert period(s * u0, alpha, p) == pytest.approx(s ** ((2 - p) / 2) * period(u0, alpha, p), rel=1e-12)
    assert period(u0, s * alpha, p) == pytest.approx(period(u0, alpha, p) / math.sqrt(s), rel=1e-12)


def test_orbit_conserves_energy_and_closes():
    orb = periodic_orbit(1.2, 0.8, 8.0, periods=3)
    assert orb.energy_drift < 1e-10
    assert orb.closure_error < 1e-8
    assert orb.sup_norm == pytest.approx(1.2, rel=1e-12)
    assert np.max(np.abs(orb.samples[:, 1])) == pytest.approx(1.2, rel=1e-9)


def test_p2_orbit_is_cosine():
    orb = periodic_orbit(1.0, 4.0, 2.0)
    x, u = orb.samples[:, 0], orb.samples[:, 1]
    np.testing.assert_allclose(u, np.cos(2.0 * x), atol=1e-10)


def test_orbit_csv_header():
    text = periodic_orbit(1.0, 1.0, 4.0, n_samples=32).to_csv()
    assert text.splitlines()[0] == "x,u,uprime,H"
    assert len(text.splitlines()) == 33


@pytest.mark.parametrize("p,alpha,u0", [(4.0, 1.0, 1.0), (8.0, 2.0, 0.5), (6.0, 0.5, 2.0)])
def test_mass_sandwich(p, alpha, u0):
    orb = periodic_orbit(u0, alpha, p)
    m = orbit_mass(orb)
    assert orb.tau * u0**2 / 8 <= m <= orb.tau * u0**2


def test_mass_threshold_is_sufficient():
    ell, a_lo, a_hi, p, target = 1.0, 0.5, 1.0, 8.0, 3.0
    H = mass_threshold(ell, a_lo, a_hi, p, target)
    # orbits of energy >= H with alpha in [a_lo, a_hi] carry mass >= target on [0, ell]
    for alpha in (a_lo, 0.75, a_hi):
        for factor in (1.0, 3.0):
            u0 = (p * factor * H / alpha) ** (1 / p)
            assert orbit_mass(periodic_orbit(u0, alpha, p), ell) >= target


def test_ode_energy_formula():
    assert ode_energy(1.0, 2.0, 3.0, 4.0, 4.0) == pytest.approx(2.0 + 1.0 - 1.5)


def test_tadpole_solution_vanishes_on_tail_and_vertex():
    u, g = tadpole_solution(8.0, k=2, v0=1.5, h=1e-3)
    assert np.all(u.values["tail"] == 0.0)
    assert u.vertex_value("v") == 0.0
    H0 = 0.5 * 1.5**2
    assert g.edge("loop").length == pytest.approx(2 * period((8 * H0) ** 0.125, 1.0, 8.0))


def test_tadpole_solution_rejects_bad_k():
    with pytest.raises(ValueError):
        tadpole_solution(8.0, k=0)
    with pytest.raises(ValueError):
        tadpole_solution(8.0, k=1.5)


def test_loop_slope_fills_the_loop():
    for k in (1, 2, 4):
        v0 = loop_slope(8.0, k, 3.0)
        _, g = tadpole_solution(8.0, k=k, v0=v0, h=1e-2)
        assert g.edge("loop").length == pytest.approx(3.0, rel=1e-12)


def test_period_table():
    rows = period_table_csv([2.0], [1.0, 4.0], [1.0]).splitlines()
    assert rows[0] == "p,alpha,u0,tau,C_p"
    assert float(rows[2].split(",")[3]) == pytest.approx(math.pi)
