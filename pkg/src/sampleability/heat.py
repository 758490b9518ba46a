"""Gaussian smoothing of grid measures, density-ratio decay, smoothing thresholds
(box and flat torus), and generation-error composition."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import convolve1d
from scipy.optimize import brentq, minimize_scalar
from scipy.special import erfc, logsumexp

from .grid import GridMeasure, GridSpec, SupportMask, build_measure
from .report import ExperimentReport, jsonable
from .torus import TorusBasis
from .transport import DiscreteMeasure, quantile_function, w2_1d

__all__ = [
    "gaussian_convolve",
    "log_ratio_smoothed",
    "geometric_constant",
    "two_bump_measure",
    "two_bump_beta0",
    "ratio_bound_experiment",
    "ThresholdReport",
    "ThresholdError",
    "sampleability_threshold",
    "SpectralThresholdInput",
    "SpectralThresholdResult",
    "spectral_threshold_torus",
    "generation_bound",
    "generation_check",
    "tradeoff_optimum",
    "tradeoff_closed_form",
]

TAIL_Z = 6.0  # two-sided Gaussian tail beyond 6 sd is ~2e-9


class ThresholdError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# convolution

def _kernel(dx: float, beta: float, half: int) -> np.ndarray:
    x = np.arange(-half, half + 1) * dx
    k = np.exp(-x * x / (2.0 * beta))
    return k / k.sum()


def gaussian_convolve(mu: GridMeasure, beta: float, boundary: str = "zero", pad: bool = True,
                      max_cells: int = 400_000, return_defect: bool = False):
    """Convolve with N(0, beta I) using the sampled, normalised Gaussian kernel.

    ``boundary="zero"``: the grid is first extended by the kernel tail radius
    (6 standard deviations) so nothing is cut off; the result lives on the
    extended grid. ``boundary="periodic"``: the grid is read as a torus and the
    kernel is wrapped. The reported defect is the Gaussian mass beyond the
    truncation radius.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    spec = mu.spec
    f = mu.density
    if boundary == "periodic":
        out = f
        for a in range(spec.D):
            n, dx, L = spec.n[a], spec.dx[a], spec.hi[a] - spec.lo[a]
            x = np.arange(n) * dx
            d = np.minimum(x, L - x)
            reps = int(math.ceil(TAIL_Z * math.sqrt(beta) / L)) + 1
            k = sum(np.exp(-((d + j * L) ** 2) / (2.0 * beta)) for j in range(-reps, reps + 1))
            k = k / k.sum()
            out = np.real(np.fft.ifft(np.fft.fft(out, axis=a) * np.fft.fft(k).reshape(
                [-1 if b == a else 1 for b in range(spec.D)]), axis=a))
        res = GridMeasure(spec, np.maximum(out, 0.0))
        return (res, 0.0) if return_defect else res
    if boundary != "zero":
        raise ValueError(f"unknown boundary mode {boundary!r}")
    tail = [int(math.ceil(TAIL_Z * math.sqrt(beta) / dx)) for dx in spec.dx]
    out_spec = spec.padded(tail) if pad else spec
    if out_spec.size > max_cells:
        raise ValueError(f"padding needs {out_spec.size} cells, above the cap {max_cells}")
    g = mu.embed(out_spec).density if pad else f
    for a in range(spec.D):
        half = max(tail[a], out_spec.n[a] - 1)
        g = convolve1d(g, _kernel(spec.dx[a], beta, half), axis=a, mode="constant", cval=0.0)
    defect = float(erfc(TAIL_Z / math.sqrt(2.0))) * spec.D
    res = GridMeasure(out_spec, np.maximum(g, 0.0))
    return (res, defect) if return_defect else res


def log_ratio_smoothed(mu: GridMeasure, S: SupportMask, beta: float, chunk: int = 2048) -> float:
    """log of max/min over S of the smoothed density, evaluated without truncation.

    The smoothed density at a cell centre x is sum_y f(y) exp(-|x-y|^2/(2 beta))
    over the positive cells y of mu (the common normalising constant cancels);
    everything is done in the log domain so tiny beta does not underflow.
    """
    spec = mu.spec
    if S.spec != spec:
        raise ValueError("mask and measure live on different grids")
    w = mu.masses.ravel()
    ypts = spec.points()[w > 0]
    logw = np.log(w[w > 0])
    xpts = S.points()
    vals = np.empty(len(xpts))
    for s in range(0, len(xpts), chunk):
        d2 = ((xpts[s:s + chunk, None, :] - ypts[None, :, :]) ** 2).sum(-1)
        vals[s:s + chunk] = logsumexp(logw[None, :] - d2 / (2.0 * beta), axis=1)
    return float(vals.max() - vals.min())


def geometric_constant(S: SupportMask, K: SupportMask) -> float:
    """M(S, K) = diam(S) (diam(S) + 2 diam(K))."""
    dS, dK = S.diameter(), K.diameter()
    return dS * (dS + 2.0 * dK)


# ---------------------------------------------------------------------------
# ratio bound and its sharpness

def two_bump_measure(a: float = 1.0, eps: float = 0.1, n: int = 220):
    """Two uniform bumps of half-width eps at +-a on the grid [-a-eps, a+eps]."""
    spec = GridSpec.make(1, -a - eps, a + eps, n)
    mu = build_measure(spec, lambda x: (np.abs(np.abs(x) - a) <= eps).astype(float))
    return mu, SupportMask(spec, np.ones(n, bool))


def two_bump_beta0(a: float, eps: float) -> float:
    return ((a - eps) ** 2 - eps ** 2) / (4.0 * math.log(2.0))


def ratio_bound_experiment(mu: GridMeasure, S: SupportMask, betas: Sequence[float],
                           a: float = 1.0, eps: float = 0.1, n_bump: int = 220,
                           bump_betas: Sequence[float] | None = None) -> ExperimentReport:
    """Check ratio(mu_beta on S) <= exp(M/(2 beta)) on a beta grid, and the matching
    lower bound for the two-bump family at beta <= beta0."""
    K = mu.support()
    M = geometric_constant(S, K)
    rep = ExperimentReport("ratio-bound", inputs={"betas": list(betas), "a": a, "eps": eps, "n_bump": n_bump})
    rep.quantities["M"] = M
    rows = []
    for beta in betas:
        lr = log_ratio_smoothed(mu, S, beta)
        lb = M / (2.0 * beta)
        rows.append([beta, math.exp(min(lr, 700.0)), math.exp(min(lb, 700.0)), lr, lb])
        rep.check(f"upper_beta={beta:g}", "smoothed density ratio at most exp(M/(2 beta))",
                  lr, lb, "<=", tol=1e-12 * max(1.0, lb))
    rep.add_table("ratio_vs_beta", ["beta", "ratio", "bound", "log_ratio", "log_bound"], rows)
    rep.add_plot("ratio_vs_inv_beta",
                 [("measured", [1 / r[0] for r in rows], [r[1] for r in rows]),
                  ("exp(M/2beta)", [1 / r[0] for r in rows], [r[2] for r in rows])],
                 logx=True, logy=True, xlabel="1/beta", ylabel="ratio", title="density ratio after smoothing")
    bump, Sb = two_bump_measure(a, eps, n_bump)
    beta0 = two_bump_beta0(a, eps)
    rep.quantities["beta0"] = beta0
    bump_betas = list(bump_betas) if bump_betas is not None else list(beta0 * np.geomspace(0.05, 1.0, 12))
    rows = []
    for beta in bump_betas:
        lr = log_ratio_smoothed(bump, Sb, beta)
        low = ((a - eps) ** 2 - eps ** 2) / (4.0 * beta)
        rows.append([beta, lr, low])
        if beta <= beta0 * (1 + 1e-12):
            rep.check(f"sharp_beta={beta:.4g}", "two-bump ratio at least exp(((a-eps)^2-eps^2)/(4 beta))",
                      lr, low, ">=")
    rep.add_table("two_bump", ["beta", "log_ratio", "log_lower_bound"], rows)
    return rep.finish()


# ---------------------------------------------------------------------------
# thresholds

def _first_crossing(log_ratio: Callable[[float], float], logC: float, betas: np.ndarray,
                    rtol: float = 1e-10):
    """Smallest grid beta with log_ratio <= logC, refined by bisection on the bracket."""
    table = []
    hit = None
    for b in betas:
        lr = log_ratio(b)
        table.append((float(b), lr))
        if lr <= logC:
            hit = len(table) - 1
            break
    if hit is None:
        return None, table
    hi = table[hit][0]
    if hit == 0:
        lo = hi
        while lo > 1e-300:
            lo *= 0.1
            lr = log_ratio(lo)
            table.insert(0, (lo, lr))
            if lr > logC:
                break
        else:
            return 0.0, table
    else:
        lo = table[hit - 1][0]
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if log_ratio(mid) <= logC:
            hi = mid
        else:
            lo = mid
    return hi, table


@dataclass
class ThresholdReport:
    C: float
    M: float
    bound: float
    beta_star: float
    table: list
    monotone: bool
    bisection_tol: float
    in_class: bool

    def to_json(self) -> str:
        return json.dumps(jsonable(self.__dict__))

    def to_report(self) -> ExperimentReport:
        rep = ExperimentReport("heat-threshold", inputs={"C": self.C})
        rep.quantities.update({"beta_star": self.beta_star, "monotone_on_grid": self.monotone,
                               "M": self.M, "in_class": self.in_class})
        rep.bounds["M_over_2logC"] = self.bound
        rep.check("threshold_bound", "threshold at most M/(2 log C)", self.beta_star, self.bound, "<=",
                  tol=self.bisection_tol)
        rep.add_table("ratio_vs_beta", ["beta", "log_ratio"], self.table)
        return rep.finish()


def sampleability_threshold(mu: GridMeasure, S: SupportMask, C: float, n_grid: int = 48,
                            rtol: float = 1e-10) -> ThresholdReport:
    """Smallest smoothing level beta with ratio(mu_beta on S) <= C (first-crossing semantics)."""
    if C <= 1:
        raise ValueError("C must exceed 1")
    K = mu.support()
    M = geometric_constant(S, K)
    bound = M / (2.0 * math.log(C))
    logC = math.log(C)
    vals = mu.density[S.flags]
    if vals.min() > 0 and math.log(vals.max()) - math.log(vals.min()) <= logC:
        return ThresholdReport(C, M, bound, 0.0, [], True, 0.0, True)
    top = max(M, bound) * (1.0 + 1e-9)
    betas = np.geomspace(1e-4 * M, top, n_grid)
    beta_star, table = _first_crossing(lambda b: log_ratio_smoothed(mu, S, b), logC, betas, rtol)
    if beta_star is None:
        raise ThresholdError(f"no crossing of ratio {C} below {top:.6g}; the geometric bound guarantees one")
    grid_vals = [lr for _, lr in table]
    monotone = all(b <= a + 1e-12 * max(1.0, abs(a)) for a, b in zip(grid_vals, grid_vals[1:]))
    return ThresholdReport(C, M, bound, beta_star, table, monotone, rtol * beta_star, False)


@dataclass
class SpectralThresholdInput:
    """Positive density sampled on a torus grid, with ratio cap and mode floor."""

    f: np.ndarray
    C: float
    L: float = 1.0
    tau: float | None = None
    mode_floor: float = 1e-12  # coefficients below this (relative to the mean) count as absent

    def __post_init__(self):
        self.f = np.asarray(self.f, float)
        if np.any(self.f <= 0):
            raise ValueError("torus density must be strictly positive")
        if self.C <= 1:
            raise ValueError("C must exceed 1")

    @property
    def basis(self) -> TorusBasis:
        return TorusBasis(self.f.shape[0], self.L, self.f.ndim)


@dataclass
class SpectralThresholdResult:
    beta_spectral: float
    beta_direct: float
    gap: float
    tau: float
    active: list
    theta: dict = field(default_factory=dict)


def spectral_threshold_torus(inp: SpectralThresholdInput, rtol: float = 1e-10) -> SpectralThresholdResult:
    """Mode-by-mode threshold max_j log(|a_j|/tau)/theta_j against a direct scan.

    Damping rates are theta_j = lambda_j / 2 (heat semigroup generated by half the
    Laplacian), which Gaussian convolution realises exactly on the flat torus.
    The default floor tau = ((C-1)/(C+1)) mean / (J max_j sup|psi_j|) makes
    |a_j| e^{-beta theta_j} <= tau for all J retained modes sufficient.
    """
    basis = inp.basis
    a = basis.analyze(inp.f)
    lam = basis.eigenvalues
    theta = lam / 2.0
    fbar = float(a.flat[0])
    nonconst = np.ones(a.shape, bool)
    nonconst.flat[0] = False
    retained = nonconst & (np.abs(a) > inp.mode_floor * abs(fbar))
    J = int(retained.sum())
    delta = (inp.C - 1.0) / (inp.C + 1.0)
    if inp.tau is not None:
        if inp.tau <= 0:
            raise ValueError("tau must be positive")
        tau = float(inp.tau)
    else:
        tau = delta * fbar / (max(J, 1) * float(basis.sup_norms[retained].max() if J else 1.0))
    active = retained & (np.abs(a) > tau)
    idx = list(zip(*np.nonzero(active)))
    beta_spec = 0.0
    for j in idx:
        beta_spec = max(beta_spec, math.log(abs(a[j]) / tau) / theta[j])

    def log_ratio(beta):
        fb = basis.synthesize(a * np.exp(-beta * theta))
        if fb.min() <= 0:
            return math.inf
        return math.log(fb.max()) - math.log(fb.min())

    logC = math.log(inp.C)
    if log_ratio(0.0) <= logC:
        beta_direct = 0.0
    else:
        th = theta[retained]
        tmin = float(th.min())
        betas = np.geomspace(1e-8 / tmin, 1e4 / tmin, 400)
        beta_direct, _ = _first_crossing(log_ratio, logC, betas, rtol)
        if beta_direct is None:
            raise ThresholdError("direct scan found no crossing")
    gap = beta_spec - beta_direct
    labels = [tuple(basis.axis_modes[i] for i in (j if isinstance(j, tuple) else (j,))) for j in idx]
    return SpectralThresholdResult(beta_spec, beta_direct, gap, tau, labels,
                                   {str(l): float(theta[j]) for l, j in zip(labels, idx)})


# ---------------------------------------------------------------------------
# generation error

def generation_bound(eps: float, lip: float, eta: float) -> float:
    """epsilon + Lip * eta."""
    if min(eps, lip, eta) < 0:
        raise ValueError("all arguments must be nonnegative")
    return eps + lip * eta


class _PiecewiseLinearMap:
    """Nondecreasing piecewise-linear map given by knots; Lipschitz constant = max slope."""

    def __init__(self, xk, yk):
        self.xk, self.yk = np.asarray(xk, float), np.asarray(yk, float)

    def __call__(self, x):
        x = np.asarray(x, float)
        slope_l = (self.yk[1] - self.yk[0]) / (self.xk[1] - self.xk[0])
        slope_r = (self.yk[-1] - self.yk[-2]) / (self.xk[-1] - self.xk[-2])
        y = np.interp(x, self.xk, self.yk)
        y = np.where(x < self.xk[0], self.yk[0] + slope_l * (x - self.xk[0]), y)
        return np.where(x > self.xk[-1], self.yk[-1] + slope_r * (x - self.xk[-1]), y)

    @property
    def lip(self) -> float:
        return float(np.max(np.abs(np.diff(self.yk) / np.diff(self.xk))))


def generation_check(mu: GridMeasure, beta: float, T=None, sampler=None, n_latent: int = 4096,
                     seed: int = 0) -> ExperimentReport:
    """Measure eps, eta, Lip(T) and the composite error on a 1D instance.

    The latent law is uniform on [0, 1], represented by ``n_latent`` quantile
    atoms. ``sampler`` maps latents to R (default: the quantile function of
    mu_beta, i.e. an exact sampler); ``T`` is a piecewise-linear monotone map
    given as ``(knots_x, knots_y)`` (default identity).
    """
    if mu.spec.D != 1:
        raise ValueError("1D instances only")
    mu_b = gaussian_convolve(mu, beta)
    q = (np.arange(n_latent) + 0.5) / n_latent
    S = sampler if sampler is not None else quantile_function(mu_b)
    lo, hi = mu_b.spec.lo[0], mu_b.spec.hi[0]
    Tm = _PiecewiseLinearMap(*(T if T is not None else ([lo, hi], [lo, hi])))
    sampled = S(q)
    gen = DiscreteMeasure(Tm(sampled))
    # T pushed forward of mu_beta: apply T to the exact quantile function of mu_beta
    Qb = quantile_function(mu_b)
    pushed = DiscreteMeasure(Tm(Qb((np.arange(8 * n_latent) + 0.5) / (8 * n_latent))))
    eps = w2_1d(pushed, mu)
    eta = w2_1d(DiscreteMeasure(sampled), mu_b)
    composite = w2_1d(gen, mu)
    bound = generation_bound(eps, Tm.lip, eta)
    rep = ExperimentReport("generation", inputs={"beta": beta, "n_latent": n_latent})
    rep.quantities.update({"eps": eps, "eta": eta, "lip": Tm.lip, "composite": composite,
                           "w2_mu_mu_beta": w2_1d(mu_b, mu)})
    rep.bounds["eps_plus_lip_eta"] = bound
    rep.check("composition", "generated law within eps + Lip(T) eta of the target", composite, bound, "<=",
              tol=1e-12)
    return rep.finish()


# ---------------------------------------------------------------------------
# smoothing trade-off

def tradeoff_closed_form(A, alpha, gamma, n, B, delta, L=1.0) -> float:
    """Minimiser of A b^alpha n^-gamma + L B b^-delta for constant Lipschitz factor L."""
    return (delta * B * L / (alpha * A * n ** (-gamma))) ** (1.0 / (alpha + delta))


def tradeoff_optimum(A, alpha, gamma, n, B, delta, lip: Callable[[float], float] | float = 1.0,
                     bracket: tuple[float, float] | None = None, dlip: Callable | None = None) -> float:
    """Minimise eps(b) + Lip(b) eta(b) with eps = A b^alpha n^-gamma and eta = B b^-delta.

    A constant ``lip`` uses the closed form. A callable (nondecreasing) ``lip`` is
    handled numerically: bounded search in log b, then a root solve of the
    stationarity condition (derivative of ``lip`` by ``dlip`` or central
    differences).
    """
    if min(A, alpha, gamma, n, B, delta) <= 0:
        raise ValueError("constants must be positive")
    if not callable(lip):
        return tradeoff_closed_form(A, alpha, gamma, n, B, delta, float(lip))
    obj = lambda b: A * b ** alpha * n ** (-gamma) + lip(b) * B * b ** (-delta)
    if bracket is None:
        guess = tradeoff_closed_form(A, alpha, gamma, n, B, delta, lip(1.0))
        bracket = (guess * 1e-6, guess * 1e6)
    lo, hi = map(math.log, bracket)
    res = minimize_scalar(lambda u: obj(math.exp(u)), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-10})
    u = res.x
    if u - lo < 1e-6 * (hi - lo) or hi - u < 1e-6 * (hi - lo):
        raise ValueError("no interior minimum in bracket")

    def dL(b):
        if dlip is not None:
            return dlip(b)
        h = 1e-6 * b
        return (lip(b + h) - lip(b - h)) / (2 * h)

    grad = lambda b: (alpha * A * b ** (alpha - 1) * n ** (-gamma) - delta * B * lip(b) * b ** (-delta - 1)
                      + B * b ** (-delta) * dL(b))
    b0 = math.exp(u)
    a, c = b0 * 0.999, b0 * 1.001
    if grad(a) < 0 < grad(c):
        return brentq(grad, a, c, xtol=1e-15 * b0, rtol=1e-15)
    return b0
