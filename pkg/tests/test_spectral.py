import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from sampleability.spectral import (AmplitudeError, TorusField, coupling_coefficients, coupling_quadrature,
                                    mode_decay_error, quadratic_prediction, sobolev_norm, torus_pme_evolve)

labels = st.tuples(st.sampled_from(["c", "s"]), st.integers(1, 6))


@settings(max_examples=60)
@given(labels, labels, labels)
def test_coupling_exact_matches_quadrature(j, k, l):
    assert coupling_coefficients(j, k, l) == pytest.approx(coupling_quadrature(j, k, l, n=64), abs=1e-12)


def test_coupling_known_values():
    # mean of 2 sqrt2 cos x cos 2x cos 3x = 2 sqrt2 / 4
    assert coupling_coefficients(("c", 1), ("c", 2), ("c", 3)) == pytest.approx(1 / math.sqrt(2))
    assert coupling_coefficients(("c", 2), ("c", 2), ("c", 0)) == pytest.approx(1.0)
    assert coupling_coefficients(("s", 1), ("s", 1), ("c", 2)) == pytest.approx(-1 / math.sqrt(2))
    assert coupling_coefficients(("c", 1), ("c", 1), ("c", 1)) == 0.0
    j2 = (("c", 1), ("c", 1))
    assert coupling_coefficients(j2, j2, (("c", 2), ("c", 2)), D=2) == pytest.approx(0.5)
    assert coupling_quadrature(j2, j2, (("c", 2), ("c", 2)), D=2, n=32) == pytest.approx(0.5)


def test_field_validation():
    with pytest.raises(AmplitudeError):
        TorusField.from_modes(32, {("c", 1): 1.0}, eps=0.5)
    with pytest.raises(ValueError):
        TorusField.from_modes(32, {("c", 1): 1.0}, rho_bar=0.0)
    f = TorusField.from_modes(32, {("c", 2): 0.7, ("s", 3): -0.2})
    assert sorted(f.active_modes()) == [("c", 2), ("s", 3)]
    assert f.density().mean() == pytest.approx(1.0, abs=1e-15)
    g = TorusField.from_grid(f.basis, f.density())
    np.testing.assert_allclose(g.density(), f.density(), atol=1e-14)


def test_sobolev_norm_single_mode():
    f = TorusField.from_modes(32, {("c", 3): 0.5}, L=1.0)
    lam = (2 * np.pi * 3) ** 2
    assert sobolev_norm(f, 3) == pytest.approx(0.5 * (1 + lam) ** 1.5)
    assert sobolev_norm(f, 0) == pytest.approx(np.sqrt(np.mean(f.u() ** 2)))


def test_heat_case_is_exact():
    # m = 1 is linear: each mode decays at exactly lambda_j
    f = TorusField.from_modes(32, {("c", 1): 1.0, ("s", 2): 0.5}, eps=0.1, L=2 * np.pi)
    traj = torus_pme_evolve(f, 1.0, 0.5, 1e-2)
    for d in mode_decay_error(traj):
        assert d.max_deviation < 1e-12
        assert d.rate_error < 1e-9
    with pytest.raises(ValueError):
        torus_pme_evolve(f, 0.5, 0.1, 1e-2)


def test_mass_and_zero_mode_preserved():
    f = TorusField.from_modes(64, {("c", 1): 1.0, ("c", 3): 0.5}, eps=0.2, L=2 * np.pi)
    traj = torus_pme_evolve(f, 2.0, 0.3, 1e-3, save_every=50)
    np.testing.assert_allclose(traj.densities().mean(axis=1), 1.0, atol=1e-14)
    assert traj.densities().min() > 0


def test_against_finite_differences():
    # dual route: method of lines with second differences on a fine periodic grid
    m, eps, L, T = 2.0, 0.2, 2 * np.pi, 0.2
    f = TorusField.from_modes(64, {("c", 1): 1.0, ("s", 2): 0.5}, eps=eps, L=L)
    spectral = torus_pme_evolve(f, m, T, 1e-3).densities()[-1]
    n = 512
    x = np.arange(n) * L / n
    h = L / n
    rho0 = 1 + eps * (math.sqrt(2) * np.cos(x) + 0.5 * math.sqrt(2) * np.sin(2 * x))

    def rhs(_, r):
        p = r ** m
        return (np.roll(p, -1) - 2 * p + np.roll(p, 1)) / h ** 2

    fd = solve_ivp(rhs, (0, T), rho0, method="BDF", rtol=1e-10, atol=1e-12).y[:, -1]
    xs = np.arange(64) * L / 64
    np.testing.assert_allclose(spectral, np.interp(xs, x, fd, period=L), atol=2e-4)


def test_quadratic_prediction():
    f = TorusField.from_modes(64, {("c", 1): 1.0, ("c", 2): 1.0}, eps=1e-3, L=2 * np.pi)
    pred = quadratic_prediction(f, 2.0, 0.0)
    assert pred[("c", 1)][0] == pytest.approx(1.0) and pred[("c", 3)][0] == 0.0
    traj = torus_pme_evolve(f, 2.0, 0.3, 1e-3)
    pred = quadratic_prediction(f, 2.0, traj.times)
    # third-harmonic generation is an order-eps effect captured by the prediction
    assert np.abs(traj.mode(("c", 3))).max() > 1e-4
    for lab, p in pred.items():
        assert np.abs(traj.mode(lab) - p).max() < 1e-5
    # eps = 0: the linear decay only
    f0 = TorusField.from_modes(64, {("c", 1): 1.0}, eps=0.0, L=2 * np.pi)
    t = np.linspace(0, 1, 5)
    np.testing.assert_allclose(quadratic_prediction(f0, 2.0, t)[("c", 1)], np.exp(-2 * t))


def test_two_dimensional_mode_decay(tmp_path):
    f = TorusField.from_modes(16, {(("c", 1), ("s", 1)): 1.0}, eps=1e-6, L=2 * np.pi, D=2)
    traj = torus_pme_evolve(f, 2.0, 0.2, 1e-3, save_every=20)
    (d,) = mode_decay_error(traj)
    assert d.rate_theory == pytest.approx(2 * 2.0)
    assert d.rate_error < 1e-5
    traj.to_csv(tmp_path / "modes.csv")
    rows = (tmp_path / "modes.csv").read_text().splitlines()
    assert rows[0] == "t,c1_s1" and len(rows) == len(traj.times) + 1
