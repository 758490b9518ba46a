"""The interpolation measure: law of L*X + (1-L)*Y with X, Y iid and L uniform on [0, 1]."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .grid import (
    GridMeasure,
    GridSpec,
    SupportMask,
    build_measure,
    density_ratio,
    moments,
    segment_defect,
)
from .report import ExperimentReport, jsonable
from .transport import w2_1d

__all__ = [
    "InterpReport",
    "SandwichResult",
    "InterpNormalizationError",
    "interp_density",
    "interp_samples",
    "interp_moments_mc",
    "interp_distance_bounds",
    "impossibility_experiments",
    "ramp_measure",
]

SANDWICH_LOW = (1.0 - np.sqrt(2.0 / 3.0)) ** 2


class InterpNormalizationError(ValueError):
    pass


def ramp_measure(R: float, n: int = 200, lo: float = 0.0, hi: float = 1.0) -> GridMeasure:
    """Linear density on [lo, hi] rising from 2/(R+1) to 2R/(R+1) (on the unit interval)."""
    spec = GridSpec.make(1, lo, hi, n)
    s = lambda x: 1.0 + (R - 1.0) * (x - lo) / (hi - lo)
    return build_measure(spec, s)


# ---------------------------------------------------------------------------
# exact 1D density by quadrature

def _cdf_antiderivative(nu: GridMeasure):
    """H(u) = int_{-inf}^u F(s) ds for the piecewise-linear CDF F of nu."""
    edges = nu.spec.edges(0)
    dx = nu.spec.dx[0]
    F = np.concatenate([[0.0], np.cumsum(nu.masses)])
    Hedge = np.concatenate([[0.0], np.cumsum(0.5 * (F[:-1] + F[1:]) * dx)])
    dens = nu.density
    lo, hi = edges[0], edges[-1]

    def H(u):
        u = np.asarray(u, float)
        k = np.clip(((u - lo) / dx).astype(int), 0, len(dens) - 1)
        s = np.clip(u - edges[k], 0.0, dx)
        return Hedge[k] + F[k] * s + 0.5 * dens[k] * s * s + np.maximum(u - hi, 0.0)

    return H


def interp_density(nu: GridMeasure, n_lambda: int = 256, return_defect: bool = False,
                   max_defect: float = 0.01):
    """Cell averages of the interpolation density of a 1D grid measure.

    The exchange symmetry (x, y, l) -> (y, x, 1-l) folds l in [1/2, 1] onto
    [0, 1/2], where the Jacobian 1/(1-l) stays bounded. For each Gauss-Legendre
    node in l the x-integral of the CDF of nu at (z - l x)/(1 - l) is done
    exactly through the antiderivative of the CDF, so each output cell receives
    its exact mass up to the l-quadrature.
    """
    if nu.spec.D != 1:
        raise ValueError("quadrature path is 1D only; use interp_samples for D=2")
    spec = nu.spec
    H = _cdf_antiderivative(nu)
    edges = spec.edges(0)
    g = nu.density
    pos = np.flatnonzero(g > 0)
    # source edges spanning the positive cells (zero cells inside contribute nothing)
    xs = edges[pos[0]:pos[-1] + 2]
    gv = g[pos[0]:pos[-1] + 1]
    nodes, weights = np.polynomial.legendre.leggauss(n_lambda)
    lam = 0.25 * (nodes + 1.0)
    wl = 0.25 * weights
    # K(z) = 2 int_0^{1/2} int g(x) F((z - l x)/(1 - l)) dx dl at every output edge z
    K = np.zeros(len(edges))
    for l, w in zip(lam, wl):
        Hz = H((edges[:, None] - l * xs[None, :]) / (1.0 - l))
        inner = ((1.0 - l) / l) * (Hz[:, :-1] - Hz[:, 1:]) @ gv
        K += 2.0 * w * inner
    mass = np.maximum(np.diff(K), 0.0)
    defect = abs(mass.sum() - 1.0)
    if defect > max_defect:
        raise InterpNormalizationError(f"normalization defect {defect:.3e} exceeds {max_defect}")
    out = GridMeasure(spec, mass / spec.dx[0])
    return (out, defect) if return_defect else out


# ---------------------------------------------------------------------------
# sampling

def _sample(nu: GridMeasure, size: int, rng) -> np.ndarray:
    """Exact draws from the piecewise-constant density: pick a cell, then uniform inside it."""
    p = nu.masses.ravel()
    idx = rng.choice(p.size, size=size, p=p / p.sum())
    pts = nu.spec.points()[idx]
    jitter = (rng.random((size, nu.spec.D)) - 0.5) * np.asarray(nu.spec.dx)
    return pts + jitter


def interp_samples(nu: GridMeasure, size: int, seed=0, return_parts: bool = False):
    """Draw Z = L X + (1 - L) Y; returns an (size, D) array."""
    rng = np.random.default_rng(seed)
    X = _sample(nu, size, rng)
    Y = _sample(nu, size, rng)
    L = rng.random((size, 1))
    Z = L * X + (1.0 - L) * Y
    return (Z, X) if return_parts else Z


@dataclass
class InterpReport:
    samples: int
    mean_before: np.ndarray
    mean_after: np.ndarray
    cov_before: np.ndarray
    cov_after: np.ndarray
    mean_stderr: np.ndarray
    eig_ratio: np.ndarray
    sandwich: "SandwichResult | None" = None

    @property
    def contraction(self) -> float:
        return float(np.trace(self.cov_after) / np.trace(self.cov_before)) if np.trace(self.cov_before) > 0 else 0.0

    def to_json(self) -> str:
        d = {k: getattr(self, k) for k in ("samples", "mean_before", "mean_after", "cov_before",
                                           "cov_after", "mean_stderr", "eig_ratio")}
        d["contraction"] = self.contraction
        if self.sandwich is not None:
            d["sandwich"] = self.sandwich._asdict()
        return json.dumps(jsonable(d))


def interp_moments_mc(nu: GridMeasure, samples: int = 1_000_000, seed=0, block: int = 250_000,
                      sandwich: bool = True) -> InterpReport:
    """Monte Carlo mean and covariance of the interpolation measure.

    Samples are drawn in blocks with per-block seeds and merged by streaming sums;
    the reference moments of nu are those of the piecewise-constant density.
    """
    if samples < 10_000:
        raise ValueError("need at least 1e4 samples")
    D = nu.spec.D
    n_tot, s1, s2 = 0, np.zeros(D), np.zeros((D, D))
    for b, start in enumerate(range(0, samples, block)):
        size = min(block, samples - start)
        Z = interp_samples(nu, size, seed=[seed, b] if np.ndim(seed) == 0 else [*seed, b])
        n_tot += size
        s1 += Z.sum(0)
        s2 += Z.T @ Z
    mean_a = s1 / n_tot
    cov_a = s2 / n_tot - np.outer(mean_a, mean_a)
    mean_b, cov_b = moments(nu, continuum=True)
    stderr = np.sqrt(np.diag(cov_a) / n_tot)
    eb = np.sort(np.linalg.eigvalsh(cov_b))
    ea = np.sort(np.linalg.eigvalsh(cov_a))
    ratio = np.divide(ea, eb, out=np.zeros_like(ea), where=eb > 0)
    sw = interp_distance_bounds(nu) if (sandwich and D == 1) else None
    return InterpReport(n_tot, mean_b, mean_a, cov_b, cov_a, stderr, ratio, sw)


# ---------------------------------------------------------------------------

class SandwichResult(NamedTuple):
    lower: float
    w2_sq: float
    upper: float
    diam_bound: float
    sigma2: float
    ok: bool


def _support_diameter(nu: GridMeasure) -> float:
    edges = nu.spec.edges(0)
    pos = np.flatnonzero(nu.density > 0)
    return float(edges[pos[-1] + 1] - edges[pos[0]])


def interp_distance_bounds(nu: GridMeasure, tol: float = 1e-4, n_lambda: int = 256) -> SandwichResult:
    """Check (1 - sqrt(2/3))^2 s^2 <= W2^2(nu_int, nu) <= (2/3) s^2 <= d^2/3.

    ``tol`` is the allowed violation relative to s^2 (discretisation slack).
    """
    if nu.spec.D != 1:
        raise ValueError("1D only")
    _, cov = moments(nu, continuum=True)
    s2 = float(cov[0, 0])
    d = _support_diameter(nu)
    if nu.masses.max() >= 1.0 - 1e-15:
        # a single cell is the grid image of a Dirac mass, a fixed point
        return SandwichResult(0.0, 0.0, 0.0, 0.0, 0.0, True)
    w2sq = w2_1d(interp_density(nu, n_lambda), nu) ** 2
    lower, upper = SANDWICH_LOW * s2, 2.0 * s2 / 3.0
    slack = tol * s2
    ok = (w2sq >= lower - slack) and (w2sq <= upper + slack) and (upper <= d * d / 3.0 + 1e-15)
    return SandwichResult(lower, w2sq, upper, d * d / 3.0, s2, bool(ok))


def _ball_mass(nu: GridMeasure, center: float, radius: float) -> float:
    """Exact mass of the open interval (center - radius, center + radius)."""
    edges = nu.spec.edges(0)
    a, b = center - radius, center + radius
    overlap = np.clip(np.minimum(edges[1:], b) - np.maximum(edges[:-1], a), 0.0, None)
    return float((nu.density * overlap).sum())


def impossibility_experiments(n: int = 200, eps_values=(1.0, 0.1, 0.01), R_dilation: float = 3.0,
                              R_ramps=(1.01, 1.1), seed: int = 0) -> ExperimentReport:
    """Scaling families showing the density ratio alone controls neither direction,
    plus the mass leak outside a non-convex support."""
    rep = ExperimentReport("interp-impossibility",
                           inputs={"n": n, "eps_values": list(eps_values), "R_dilation": R_dilation,
                                   "R_ramps": list(R_ramps)})
    # (a) dilations of a fixed ramp: ratio unchanged, distance shrinks like eps
    rows = []
    ratios = []
    for eps in eps_values:
        nu = ramp_measure(R_dilation, n, 0.0, eps)
        full = SupportMask(nu.spec, np.ones(n, bool))
        r = density_ratio(nu, full)
        ratios.append(r)
        w2sq = w2_1d(interp_density(nu), nu) ** 2
        rows.append([eps, r, w2sq, eps ** 2 / 3.0])
        rep.check(f"dilation_eps={eps:g}", "interpolation distance squared at most diam^2/3 under dilation",
                  w2sq, eps ** 2 / 3.0, "<=")
    rep.check("dilation_ratio_fixed", "density ratio invariant under dilation",
              max(ratios) - min(ratios), 0.0, "<=", tol=1e-9 * max(ratios))
    rep.add_table("dilation", ["eps", "ratio", "w2_sq", "eps2_over_3"], rows)
    # (b) ramps with ratio tending to 1 keep a fixed fraction of the diameter
    rows = []
    for R in R_ramps:
        nu = ramp_measure(R, n)
        w2 = w2_1d(interp_density(nu), nu)
        s2 = float(moments(nu, continuum=True)[1][0, 0])
        rows.append([R, w2, np.sqrt(SANDWICH_LOW * s2)])
        rep.check(f"ramp_R={R:g}", "distance bounded below as the ratio tends to 1", w2, 0.04, ">=")
    rep.add_table("ramps", ["R", "w2", "sandwich_lower"], rows)
    # (c) two clusters: mass leaks into the gap
    spec = GridSpec.make(1, 0.0, 1.0, n)
    nu = build_measure(spec, lambda x: ((x < 0.1) | (x > 0.9)).astype(float))
    K = nu.support()
    delta, (x0, y0, lam0) = segment_defect(K, return_witness=True)
    x0, y0 = float(x0[0]), float(y0[0])
    z0 = lam0 * x0 + (1 - lam0) * y0
    d = _support_diameter(nu)
    rho = delta / 8.0
    eta = min(lam0 / 2.0, (1 - lam0) / 2.0, delta / (8.0 * (1.0 + d)))
    bx, by = _ball_mass(nu, x0, rho), _ball_mass(nu, y0, rho)
    leak_bound = 2.0 * eta * bx * by
    nu_int = interp_density(nu)
    leak = _ball_mass(nu_int, z0, delta / 2.0)
    outside = float(nu_int.masses[~K.flags].sum())
    w2sq = w2_1d(nu_int, nu) ** 2
    w2_bound = 0.5 * delta ** 2 * eta * bx * by
    rep.quantities.update({"segment_defect": delta, "witness": [x0, y0, lam0], "rho": rho, "eta": eta,
                           "ball_mass_x0": bx, "ball_mass_y0": by, "leak_near_z0": leak,
                           "mass_outside_support": outside, "w2_sq": w2sq})
    rep.bounds.update({"leak_lower": leak_bound, "w2_sq_lower": w2_bound})
    rep.check("leak_positive", "interpolation puts mass outside a non-convex support", outside, 0.0, ">")
    rep.check("leak_bound", "mass near the chord point at least 2 eta nu(B_rho(x0)) nu(B_rho(y0))",
              leak, leak_bound, ">=")
    rep.check("leak_w2", "distance lower bound from the leaked mass", w2sq, w2_bound, ">=")
    return rep.finish()
