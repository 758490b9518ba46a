import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from sampleability.flows import (ConstantField, DomainExitError, GridField, LinearField, VacuumError,
                                 constrained_bb_certificate, integrate_flow, lipschitz_certificate, pme_velocity,
                                 pme_velocity_bound, pme_velocity_field, relaxed_membership)
from sampleability.grid import GridMeasure, GridSpec
from sampleability.pme import PMEConfig
from sampleability.projection import SampleableSpec
from sampleability.spectral import TorusField, torus_pme_evolve


def test_constant_shift(tmp_path):
    pts = np.array([[0.0, 0.0], [1.0, 2.0], [-1.0, 0.5]])
    flow = integrate_flow(ConstantField([0.5, -1.0]), pts, 2.0, 0.1)
    np.testing.assert_allclose(flow.final, pts + [1.0, -2.0], atol=1e-14)
    cert = lipschitz_certificate(flow)
    assert cert.forward == pytest.approx(1.0) and cert.bound == 1.0
    flow.to_csv(tmp_path / "flow.csv")
    assert (tmp_path / "flow.csv").read_text().splitlines()[0] == "t,point,x0,x1,dv_integral"


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_linear_flow_matches_matrix_exponential(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(2, 2))
    pts = rng.normal(size=(6, 2))
    T = 0.8
    flow = integrate_flow(LinearField(A), pts, T, 0.01)
    np.testing.assert_allclose(flow.final, pts @ expm(A * T).T, atol=1e-8)
    cert = lipschitz_certificate(flow)
    assert cert.holds()
    np.testing.assert_allclose(flow.inverse().final, pts, atol=1e-8)


def test_certificate_is_tight_for_diagonal_stretch():
    # along the stretching axis the flow expands distances by exactly exp(T |A|)
    A = np.diag([1.0, -0.5])
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    cert = lipschitz_certificate(integrate_flow(LinearField(A), pts, 1.0, 0.01))
    assert cert.forward == pytest.approx(np.e, rel=1e-9)
    assert cert.bound == pytest.approx(np.e, rel=1e-12)
    assert cert.inverse == pytest.approx(np.exp(0.5), rel=1e-9)


def test_certificate_input_errors():
    flow = integrate_flow(ConstantField([1.0]), np.array([[0.0], [0.0]]), 1.0, 0.1)
    with pytest.raises(ValueError, match="coincident"):
        lipschitz_certificate(flow)
    with pytest.raises(ValueError, match="two"):
        lipschitz_certificate(integrate_flow(ConstantField([1.0]), np.array([[0.0]]), 1.0, 0.1))
    with pytest.raises(ValueError, match="too large"):
        integrate_flow(LinearField([[5.0]]), np.array([[0.0], [1.0]]), 1.0, 0.1)


def test_grid_field_linear_velocity():
    # piecewise linear interpolation reproduces v(x) = -x exactly, Lipschitz constant 1
    spec = GridSpec.make(1, -2.0, 2.0, 40)
    frames = np.stack([-spec.centers(0)] * 2)
    v = GridField(spec, [0.0, 1.0], frames)
    assert v.dv_norm(0.5) == pytest.approx(1.0)
    pts = np.array([[-1.0], [0.3], [1.5]])
    flow = integrate_flow(v, pts, 1.0, 0.01)
    np.testing.assert_allclose(flow.final, pts * np.exp(-1.0), atol=1e-9)
    out = GridField(spec, [0.0, 1.0], -frames)
    with pytest.raises(DomainExitError):
        integrate_flow(out, pts, 1.0, 0.01)


def test_pme_velocity_formula():
    spec = GridSpec.make(1, -1.0, 1.0, 50)
    x = spec.centers(0)
    assert np.all(pme_velocity(np.full(50, 2.0), 3.0, spec.dx, False) == 0)
    # m = 2: v = -grad(2 rho); centred differences are exact on quadratics
    v = pme_velocity(1 + x ** 2, 2.0, spec.dx, False)[..., 0]
    np.testing.assert_allclose(v[1:-1], -4 * x[1:-1], atol=1e-12)


def test_velocity_bound():
    spec = GridSpec.make(1, 0.0, 1.0, 64)
    x = spec.centers(0)
    mu = GridMeasure(spec, 1 + 0.3 * np.sin(2 * np.pi * x))
    b2 = pme_velocity_bound(mu, 2.0)
    # for m = 2 the Hessian of 2 rho is exactly twice that of rho
    assert b2.direct == pytest.approx(b2.bound, rel=1e-12)
    for m in (1.5, 3.0, 4.0):
        assert pme_velocity_bound(mu, m).ok
    vac = GridMeasure(spec, np.where(x < 0.5, 1.0, 0.0))
    with pytest.raises(VacuumError):
        pme_velocity_bound(vac, 1.5)
    assert pme_velocity_bound(vac, 3.0).ok


def test_torus_velocity_flow():
    f = TorusField.from_modes(32, {("c", 1): 1.0}, eps=0.1, L=1.0)
    traj = torus_pme_evolve(f, 2.0, 0.01, 1e-4, save_every=10)
    v = pme_velocity_field(traj)
    pts = np.linspace(0.05, 0.95, 7)[:, None]
    flow = integrate_flow(v, pts, 0.01, 1e-4)
    assert lipschitz_certificate(flow).holds()


def test_relaxed_membership():
    spec = GridSpec.make(1, -2.0, 2.0, 80)
    x = spec.centers(0)
    cls = SampleableSpec(2.0, 1.0)
    r = relaxed_membership(GridMeasure(spec, (np.abs(x) < 1).astype(float)), cls)
    assert r["accepted"] and r["ratio_on_ball"] == pytest.approx(1.0) and r["mass_outside_ball"] == 0
    wide = relaxed_membership(GridMeasure(spec, np.exp(-x ** 2)), cls)
    assert wide["mass_outside_ball"] > 0 and wide["ratio_on_own_support"] > wide["ratio_on_ball"]


def test_constrained_certificate():
    # the porous medium front needs vacuum around the ball to spread into
    spec = GridSpec.make(1, -2.5, 2.5, 150)
    x = spec.centers(0)
    mu = GridMeasure(spec, np.where(np.abs(x) <= 1.0, np.exp(-2.0 * np.abs(x)), 0.0))
    rep = constrained_bb_certificate(mu, SampleableSpec(2.0, 1.0), PMEConfig(m=2.0, T=2.0, cadence=0.01))
    assert rep.passed, [c.name for c in rep.failures()]
    q = rep.quantities
    assert q["half_D_C_sq"] <= q["pme_path_bound"]
    with pytest.raises(ValueError):
        constrained_bb_certificate(GridMeasure(GridSpec.make(2, 0, 1, 4), np.ones((4, 4))), SampleableSpec(2.0, 1.0),
                                   PMEConfig(m=2.0, T=1.0))
