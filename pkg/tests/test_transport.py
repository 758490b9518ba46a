import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sampleability.grid import GridMeasure, GridSpec
from sampleability.transport import (DiscreteMeasure, MonotoneMap1D, SinkhornConvergenceError, atomize, bb_action,
                                     mccann_interpolate, mccann_path, mccann_quantile, quantile_function,
                                     sinkhorn_w2, w2_1d, w2_lp)


def test_single_atoms():
    a, b = DiscreteMeasure([[0.0]]), DiscreteMeasure([[1.5]])
    assert w2_lp(a, b).cost == pytest.approx(2.25)
    assert w2_1d(a, b) == pytest.approx(1.5)


def test_identical_two_atom_measures():
    a = DiscreteMeasure([[0.0, 0.0], [1.0, 2.0]], [0.3, 0.7])
    plan = w2_lp(a, a)
    assert plan.cost == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(plan.coupling, np.diag([0.3, 0.7]), atol=1e-12)


def test_lp_matches_assignment_brute_force(rng):
    # equal weights: the optimal plan is a permutation (Birkhoff)
    for _ in range(3):
        x, y = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
        best = min(np.sum((x - y[list(p)]) ** 2) / 6 for p in itertools.permutations(range(6)))
        assert w2_lp(DiscreteMeasure(x), DiscreteMeasure(y)).cost == pytest.approx(best, abs=1e-12)


def test_lp_duals_certify(rng):
    a = DiscreteMeasure(rng.normal(size=(7, 2)), rng.uniform(0.1, 1, 7), normalize=True)
    b = DiscreteMeasure(rng.normal(size=(5, 2)), rng.uniform(0.1, 1, 5), normalize=True)
    plan = w2_lp(a, b)
    C = ((a.points[:, None, :] - b.points[None, :, :]) ** 2).sum(-1)
    slack = C - plan.phi[:, None] - plan.psi[None, :]
    assert slack.min() >= -1e-9
    assert np.abs(slack[plan.coupling > 1e-12]).max() <= 1e-9
    assert plan.dual_value() == pytest.approx(plan.cost, abs=1e-10)
    assert plan.marginal_error() <= 1e-10
    assert json.loads(plan.to_json())["shape"] == [7, 5]


def test_lp_cap():
    a = DiscreteMeasure(np.arange(5.0))
    with pytest.raises(ValueError, match="sinkhorn"):
        w2_lp(a, a, cap=4)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10), st.integers(1, 10))
def test_quantile_w2_equals_lp(seed, n, m):
    rng = np.random.default_rng(seed)
    a = DiscreteMeasure(rng.uniform(-1, 1, n), rng.uniform(0.1, 1, n), normalize=True)
    b = DiscreteMeasure(rng.uniform(-1, 1, m), rng.uniform(0.1, 1, m), normalize=True)
    assert w2_1d(a, b) ** 2 == pytest.approx(w2_lp(a, b).cost, abs=1e-10)


def test_continuous_uniform_intervals():
    # Q_a(q) = q, Q_b(q) = 2q: int (q - 2q)^2 = 1/3; a shift by s costs s^2
    spec = GridSpec.make(1, 0.0, 2.0, 40)
    x = spec.centers(0)
    a = GridMeasure(spec, (x < 1.0).astype(float))
    b = GridMeasure(spec, np.ones(40))
    assert w2_1d(a, b) ** 2 == pytest.approx(1 / 3, abs=1e-12)
    c = GridMeasure(spec, ((x > 0.5) & (x < 1.5)).astype(float))
    assert w2_1d(a, c) ** 2 == pytest.approx(0.25, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_w2_is_a_metric(seed):
    rng = np.random.default_rng(seed)
    spec = GridSpec.make(1, 0, 1, 20)
    a, b, c = (GridMeasure(spec, rng.uniform(0, 1, 20) + 1e-3) for _ in range(3))
    assert w2_1d(a, a) == pytest.approx(0.0, abs=1e-9)
    assert w2_1d(a, b) == pytest.approx(w2_1d(b, a), rel=1e-9)
    assert w2_1d(a, c) <= w2_1d(a, b) + w2_1d(b, c) + 1e-12


def test_sinkhorn_approaches_lp(rng):
    spec = GridSpec.make(1, 0, 1, 30)
    x = spec.centers(0)
    a = atomize(GridMeasure(spec, np.exp(-(x - 0.3) ** 2 / 0.01) + 1e-3))
    b = atomize(GridMeasure(spec, np.exp(-(x - 0.7) ** 2 / 0.02) + 1e-3))
    exact = w2_lp(a, b).cost
    gaps = []
    for reg in (1e-1, 1e-2, 1e-3):
        sk = sinkhorn_w2(a, b, reg)
        assert sk.info["marginal_error"] < 1e-9
        assert sk.cost >= exact - 1e-12  # plan cost of a feasible coupling
        gaps.append(sk.cost - exact)
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] / exact < 0.01


def test_sinkhorn_errors():
    a = DiscreteMeasure(np.linspace(0, 1, 5))
    with pytest.raises(ValueError):
        sinkhorn_w2(a, a, 0.0)
    b = DiscreteMeasure(np.linspace(0.2, 1.5, 5))
    with pytest.raises(SinkhornConvergenceError) as exc:
        sinkhorn_w2(a, b, 1e-3, max_iter=2, check_every=1)
    assert exc.value.last_error > 0


def test_monotone_map_pushes_forward():
    spec = GridSpec.make(1, -1, 1, 50)
    x = spec.centers(0)
    mu = GridMeasure(spec, np.exp(-x ** 2 / 0.1))
    nu = GridMeasure(spec, 1 + x)
    T = MonotoneMap1D(mu, nu)
    q = (np.arange(20000) + 0.5) / 20000
    pushed = DiscreteMeasure(T(quantile_function(mu)(q)))
    assert w2_1d(pushed, nu) < 1e-3
    assert np.all(np.diff(T(x)) >= 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_mccann_constant_speed(seed, t):
    rng = np.random.default_rng(seed)
    spec = GridSpec.make(1, 0, 1, 16)
    mu = GridMeasure(spec, rng.uniform(0.1, 1, 16))
    nu = GridMeasure(spec, rng.uniform(0.1, 1, 16))
    Qt = mccann_quantile(mu, nu, t)
    d = w2_1d(mu, nu)
    assert w2_1d(mu, Qt) == pytest.approx(t * d, abs=1e-9)
    assert w2_1d(Qt, nu) == pytest.approx((1 - t) * d, abs=1e-9)


def test_mccann_interpolate_atoms():
    spec = GridSpec.make(1, 0, 1, 10)
    mu = GridMeasure(spec, np.ones(10))
    mid = mccann_interpolate(mu, mu, 0.5, n_atoms=100)
    assert len(mid) == 100
    with pytest.raises(ValueError):
        mccann_interpolate(mu, mu, 1.5)


def test_translation_action():
    # translating a bump by s: action 1/2 s^2; the upwind residual is first order in dx
    res = []
    for n in (200, 400, 800):
        spec = GridSpec.make(1, -1, 1, n)
        x = spec.centers(0)
        mu = GridMeasure(spec, np.exp(-(x + 0.2) ** 2 / 0.02))
        nu = GridMeasure(spec, np.exp(-(x - 0.2) ** 2 / 0.02))
        path, dt = mccann_path(mu, nu, 64)
        act = bb_action(path, dt)
        assert act.action == pytest.approx(0.5 * 0.4 ** 2, rel=1e-3)
        res.append(act.residual)
    orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(orders > 0.9)
