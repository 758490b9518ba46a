import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from sampleability.grid import GridMeasure, GridSpec
from sampleability.pme import (BarenblattProfile, DomainTooSmallError, PMEConfig, boundary_obstruction_report,
                               comparison_probe, dissipation, entropy_dissipation_audit, l1_distance, pme_evolve,
                               renyi_entropy, support_growth_fit, support_radius, w2_budget_check)


@pytest.mark.parametrize("D,m,beta", [(1, 2.0, 1 / 3), (2, 2.0, 1 / 4), (1, 3.0, 1 / 4), (2, 1.5, 1 / 3)])
def test_barenblatt_exponent(D, m, beta):
    assert BarenblattProfile(D, m).beta == pytest.approx(beta)


@pytest.mark.parametrize("D,m,mass", [(1, 2.0, 1.0), (1, 3.0, 2.5), (2, 2.0, 1.0), (2, 1.5, 0.7)])
def test_barenblatt_mass_by_quadrature(D, m, mass):
    B = BarenblattProfile(D, m, mass=mass)
    t = 0.3
    R = B.radius(t)
    if D == 1:
        val = integrate.quad(lambda r: B(t, r), -R, R, epsabs=1e-13)[0]
    else:
        val = integrate.quad(lambda r: 2 * math.pi * r * B(t, r, 0.0), 0, R, epsabs=1e-13)[0]
    assert val == pytest.approx(mass, rel=1e-8)


def test_barenblatt_support_and_residual():
    B = BarenblattProfile(1, 2.0)
    t = 0.5
    R = B.radius(t)
    assert B(t, np.array([0.99 * R]))[0] > 0
    assert B(t, np.array([1.01 * R]))[0] == 0
    r = np.linspace(0, 0.9 * R, 50)
    assert B.pde_residual(t, r, h=1e-4).max() < 1e-5
    B2 = BarenblattProfile(2, 2.0)
    r2 = np.linspace(0.05, 0.9 * B2.radius(t), 50)
    assert B2.pde_residual(t, r2, h=1e-4).max() < 1e-5


def test_cell_averages_conserve_mass():
    B = BarenblattProfile(2, 2.0)
    spec = GridSpec.make(2, -1.5, 1.5, 64)
    assert B.cell_averages(spec, 0.2).sum() * spec.cell_volume == pytest.approx(1.0, rel=1e-6)


def test_config_validation():
    with pytest.raises(ValueError):
        PMEConfig(m=1.0, T=1.0)
    with pytest.raises(ValueError):
        PMEConfig(m=2.0, T=1.0, cfl=0.6)
    with pytest.raises(ValueError):
        PMEConfig(m=2.0, T=1.0, boundary="dirichlet")
    assert PMEConfig(m=2.0, T=1.0).to_dict()["boundary"] == "compact"


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1.5, 2.0, 3.0]))
def test_evolution_conserves_mass_and_positivity(seed, m):
    rng = np.random.default_rng(seed)
    spec = GridSpec.make(1, -2.0, 2.0, 80)
    x = spec.centers(0)
    d = np.where(np.abs(x) < 0.6, rng.uniform(0.0, 1.0, 80), 0.0)
    d[40] += 0.5
    st_ = pme_evolve(GridMeasure(spec, d), PMEConfig(m=m, T=0.01, cadence=0.0025))
    for s in st_:
        assert s.density.min() >= 0
        assert s.measure.mass() == pytest.approx(1.0, abs=1e-12)
    E = [s.E for s in st_]
    assert all(b <= a + 1e-14 * a for a, b in zip(E, E[1:]))
    radii = [support_radius(s) for s in st_]
    assert all(b >= a - 1e-12 for a, b in zip(radii, radii[1:]))


@pytest.mark.parametrize("boundary", ["periodic", "noflux"])
def test_constant_is_stationary(boundary):
    spec = GridSpec.make(1, 0.0, 1.0, 32)
    st_ = pme_evolve(GridMeasure(spec, np.ones(32)), PMEConfig(m=2.0, T=0.1, boundary=boundary))
    np.testing.assert_allclose(st_[-1].density, 1.0, rtol=1e-13)
    assert entropy_dissipation_audit(st_, periodic=boundary == "periodic").passed


def test_barenblatt_convergence():
    B = BarenblattProfile(1, 2.0)
    errs = []
    for n in (128, 256):
        spec = GridSpec.make(1, -2.0, 2.0, n)
        s = pme_evolve(B.measure(spec, 0.1), PMEConfig(m=2.0, T=0.1), t_start=0.1)[-1]
        errs.append(l1_distance(s.density, B.cell_averages(spec, 0.2), spec.cell_volume))
        assert s.audit["mass_drift"] < 1e-12
    assert errs[1] < errs[0] / 2.5


def test_domain_too_small():
    B = BarenblattProfile(1, 2.0)
    spec = GridSpec.make(1, -0.7, 0.7, 64)
    with pytest.raises(DomainTooSmallError):
        pme_evolve(B.measure(spec, 0.1), PMEConfig(m=2.0, T=2.0), t_start=0.1)


def test_until_stops_early():
    B = BarenblattProfile(1, 2.0)
    spec = GridSpec.make(1, -2.0, 2.0, 128)
    st_ = pme_evolve(B.measure(spec, 0.1), PMEConfig(m=2.0, T=1.0, cadence=0.01), t_start=0.1,
                     until=lambda s: s.t >= 0.15)
    assert st_[-1].t == pytest.approx(0.15, abs=1e-9)


def test_dissipation_matches_formula_on_smooth_profile():
    # int |grad(m/(m-1) rho^(m-1))|^2 rho for rho = 1 + 0.5 cos(pi x), m = 2: integral of 4 rho'^2 rho
    spec = GridSpec.make(1, -1.0, 1.0, 2000)
    x = spec.centers(0)
    rho = 1 + 0.5 * np.cos(np.pi * x)
    exact = integrate.quad(lambda s: 4 * (0.5 * np.pi * np.sin(np.pi * s)) ** 2 * (1 + 0.5 * np.cos(np.pi * s)),
                           -1, 1)[0]
    assert dissipation(rho, 2.0, spec, periodic=False) == pytest.approx(exact, rel=1e-4)
    assert renyi_entropy(np.ones(4), 2.0, 0.25) == pytest.approx(1.0)


def test_comparison_probe_and_errors():
    spec = GridSpec.make(1, -3.0, 3.0, 128)
    small = BarenblattProfile(1, 2.0, mass=1.0).cell_averages(spec, 0.1)
    big = BarenblattProfile(1, 2.0, mass=2.0).cell_averages(spec, 0.1)
    dt = 0.4 * spec.dx[0] ** 2 / (4 * big.max())
    assert comparison_probe(spec, small, big, PMEConfig(m=2.0, T=0.1, cadence=0.05, dt_max=dt)) <= 1e-12
    with pytest.raises(ValueError, match="ordered"):
        comparison_probe(spec, big, small, PMEConfig(m=2.0, T=0.1, dt_max=dt))
    with pytest.raises(ValueError, match="dt_max"):
        comparison_probe(spec, small, big, PMEConfig(m=2.0, T=0.1))


def test_support_fit_budget_and_obstruction():
    B = BarenblattProfile(1, 2.0)
    spec = GridSpec.make(1, -3.0, 3.0, 256)
    times = tuple(np.geomspace(0.1, 1.0, 9)[1:])
    st_ = pme_evolve(B.measure(spec, 0.1), PMEConfig(m=2.0, T=0.9, output_times=times), t_start=0.1)
    fit = support_growth_fit(st_, expected_exponent=B.beta)
    assert fit.exponent == pytest.approx(1 / 3, rel=0.05)
    assert fit.inclusion_ok
    with pytest.raises(ValueError):
        support_growth_fit(st_[:5])
    for s in st_[1:]:
        w2sq, budget, slack = w2_budget_check(st_[0], s)
        assert slack > 0 and w2sq <= budget
    rep = boundary_obstruction_report(st_[3], initial=st_[0])
    assert rep.passed
