"""Porous medium equation d_t rho = Lap(rho^m): explicit finite volumes, Barenblatt
solutions, support growth, Renyi entropy dissipation and transport-cost budgets."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from .grid import GridMeasure, GridSpec, SupportMask, density_ratio
from .heat import geometric_constant, log_ratio_smoothed
from .report import ExperimentReport, jsonable
from .transport import atomize, w2_1d, w2_lp

__all__ = [
    "PMEConfig",
    "PMEState",
    "BarenblattProfile",
    "DomainTooSmallError",
    "renyi_entropy",
    "dissipation",
    "pme_evolve",
    "support_radius",
    "support_growth_fit",
    "entropy_dissipation_audit",
    "w2_budget_check",
    "boundary_obstruction_report",
    "l1_distance",
    "comparison_probe",
    "run_manifest",
]

SUPPORT_THRESHOLD = 1e-10


class DomainTooSmallError(RuntimeError):
    pass


@dataclass(frozen=True)
class PMEConfig:
    m: float
    T: float
    cadence: float | None = None
    output_times: tuple[float, ...] | None = None
    cfl: float = 0.4
    dt_max: float | None = None
    boundary: str = "compact"  # compact | noflux | periodic
    edge_threshold: float = 1e-14
    track_dissipation: bool = True

    def __post_init__(self):
        if self.m <= 1:
            raise ValueError("exponent m must exceed 1")
        if not 0 < self.cfl <= 0.5:
            raise ValueError("CFL safety factor must lie in (0, 0.5]")
        if self.boundary not in ("compact", "noflux", "periodic"):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    def to_dict(self) -> dict:
        return jsonable(self.__dict__)


def renyi_entropy(rho: np.ndarray, m: float, cell_volume: float) -> float:
    """E_m = 1/(m-1) int rho^m."""
    return float((rho ** m).sum() * cell_volume / (m - 1.0))


def _face_terms(rho: np.ndarray, m: float, spec: GridSpec, periodic: bool):
    """Yield, per axis, face velocities v = -grad(m/(m-1) rho^(m-1)) and face densities."""
    p = (m / (m - 1.0)) * rho ** (m - 1.0)
    for a in range(spec.D):
        if periodic:
            dp = np.roll(p, -1, axis=a) - p
            r = 0.5 * (np.roll(rho, -1, axis=a) + rho)
        else:
            dp = np.diff(p, axis=a)
            sl0 = [slice(None)] * spec.D
            sl1 = [slice(None)] * spec.D
            sl0[a], sl1[a] = slice(None, -1), slice(1, None)
            r = 0.5 * (rho[tuple(sl0)] + rho[tuple(sl1)])
        yield -dp / spec.dx[a], r


def dissipation(rho: np.ndarray, m: float, spec: GridSpec, periodic: bool = False) -> float:
    """int |v|^2 rho with face velocities and arithmetic-mean face densities.

    Faces where either neighbour is empty carry no mass flux and are skipped,
    which amounts to one-sided differences at the free boundary.
    """
    total = 0.0
    for a, (v, r) in enumerate(_face_terms(rho, m, spec, periodic)):
        if periodic:
            both = (rho > 0) & (np.roll(rho, -1, axis=a) > 0)
        else:
            sl0 = [slice(None)] * spec.D
            sl1 = [slice(None)] * spec.D
            sl0[a], sl1[a] = slice(None, -1), slice(1, None)
            both = (rho[tuple(sl0)] > 0) & (rho[tuple(sl1)] > 0)
        total += float((v * v * r)[both].sum())
    return total * spec.cell_volume


@dataclass(frozen=True, eq=False)
class PMEState:
    measure: GridMeasure
    t: float
    m: float
    dissipated: float = 0.0  # int_{t_start}^t int |v|^2 rho accumulated by the solver
    steps: int = 0
    audit: dict | None = None

    @property
    def density(self) -> np.ndarray:
        return self.measure.density

    @cached_property
    def E(self) -> float:
        return renyi_entropy(self.density, self.m, self.measure.spec.cell_volume)

    def support(self, threshold: float = SUPPORT_THRESHOLD) -> SupportMask:
        return self.measure.support(threshold)


# ---------------------------------------------------------------------------

class BarenblattProfile:
    """Self-similar solution t^(-D b) (C_B - kappa |x|^2 t^(-2b))_+^(1/(m-1)), b = 1/(D(m-1)+2)."""

    def __init__(self, D: int, m: float, mass: float = 1.0, center=None):
        if m <= 1:
            raise ValueError("m must exceed 1")
        self.D, self.m, self.mass = D, m, mass
        self.center = np.zeros(D) if center is None else np.asarray(center, float)
        self.beta = 1.0 / (D * (m - 1.0) + 2.0)
        self.kappa = (m - 1.0) * self.beta / (2.0 * m)
        p = 1.0 / (m - 1.0)
        # mass of (C - kappa r^2)_+^p is C^(p + D/2) kappa^(-D/2) pi^(D/2) Gamma(p+1)/Gamma(p+1+D/2)
        log_unit = 0.5 * D * math.log(math.pi) + gammaln(p + 1) - gammaln(p + 1 + 0.5 * D) - 0.5 * D * math.log(self.kappa)
        self.C_B = math.exp((math.log(mass) - log_unit) / (p + 0.5 * D))

    def radius(self, t: float) -> float:
        return math.sqrt(self.C_B / self.kappa) * t ** self.beta

    def __call__(self, t: float, *coords) -> np.ndarray:
        r2 = sum((c - x0) ** 2 for c, x0 in zip(coords, self.center))
        base = np.maximum(self.C_B - self.kappa * r2 * t ** (-2.0 * self.beta), 0.0)
        return t ** (-self.D * self.beta) * base ** (1.0 / (self.m - 1.0))

    def cell_averages(self, spec: GridSpec, t: float, sub: int = 8) -> np.ndarray:
        """Cell averages by Gauss-Legendre sub-quadrature (sub points per axis per cell)."""
        nodes, weights = np.polynomial.legendre.leggauss(sub)
        out = np.zeros(spec.shape)
        axes = []
        for a in range(spec.D):
            c = spec.centers(a)
            axes.append([(c + 0.5 * spec.dx[a] * x, 0.5 * w) for x, w in zip(nodes, weights)])
        if spec.D == 1:
            for x, w in axes[0]:
                out += w * self(t, x)
        else:
            for x, wx in axes[0]:
                for y, wy in axes[1]:
                    X, Y = np.meshgrid(x, y, indexing="ij")
                    out += wx * wy * self(t, X, Y)
        return out

    def measure(self, spec: GridSpec, t: float) -> GridMeasure:
        return GridMeasure(spec, self.cell_averages(spec, t))

    def pde_residual(self, t: float, r: np.ndarray, h: float = 1e-4) -> np.ndarray:
        """|d_t B - Lap(B^m)| at radii r (1D line through the centre, radial Laplacian),
        evaluated with centred differences; used to validate the constants."""
        m, D = self.m, self.D
        f = lambda tt, rr: self(tt, *([rr] + [np.zeros_like(rr)] * (D - 1)))
        dt = (f(t + h, r) - f(t - h, r)) / (2 * h)
        P = lambda rr: f(t, rr) ** m
        d2 = (P(r + h) - 2 * P(r) + P(r - h)) / h ** 2
        d1 = (P(r + h) - P(r - h)) / (2 * h)
        lap = d2 + (D - 1) * d1 / np.where(r == 0, 1.0, r)
        return np.abs(dt - lap)


# ---------------------------------------------------------------------------

def _laplacian(P: np.ndarray, spec: GridSpec, boundary: str) -> np.ndarray:
    out = np.zeros_like(P)
    for a in range(spec.D):
        if boundary == "periodic":
            out += (np.roll(P, -1, axis=a) - 2 * P + np.roll(P, 1, axis=a)) / spec.dx[a] ** 2
            continue
        flux = np.diff(P, axis=a)  # face differences
        pad = [(0, 0)] * spec.D
        pad[a] = (1, 1)
        if boundary == "compact":
            # zero ghost cells outside the box
            first = np.take(P, [0], axis=a)
            last = np.take(P, [-1], axis=a)
            flux = np.concatenate([first, flux, -last], axis=a)
        else:
            flux = np.pad(flux, pad)
        out += np.diff(flux, axis=a) / spec.dx[a] ** 2
    return out


def _edge_max(rho: np.ndarray) -> float:
    vals = []
    for a in range(rho.ndim):
        vals.append(np.take(rho, [0, -1], axis=a).max())
    return float(max(vals))


def _output_times(cfg: PMEConfig, t_start: float) -> list[float]:
    if cfg.output_times is not None:
        outs = sorted(float(t) for t in cfg.output_times)
    elif cfg.cadence is not None:
        k = int(round(cfg.T / cfg.cadence))
        outs = [t_start + cfg.cadence * (i + 1) for i in range(k)]
    else:
        outs = [t_start + cfg.T]
    return [t for t in outs if t > t_start]


def _march(rho: np.ndarray, spec: GridSpec, cfg: PMEConfig, t_start: float, audit: dict):
    """Advance a raw density array, yielding (t, rho, dissipated, steps) at each output time."""
    m = cfg.m
    dx2 = min(spec.dx) ** 2
    periodic = cfg.boundary == "periodic"
    t, dissipated, steps = t_start, 0.0, 0
    mass0 = rho.sum()
    audit.update(mass_drift=0.0, clipped_mass=0.0, steps=0)
    for t_out in _output_times(cfg, t_start):
        while t < t_out - 1e-14 * max(1.0, t_out):
            rmax = rho.max()
            dt = cfg.cfl * dx2 / (2 * spec.D * m * max(rmax, 1e-300) ** (m - 1.0))
            if cfg.dt_max is not None:
                dt = min(dt, cfg.dt_max)
            dt = min(dt, t_out - t)
            if cfg.track_dissipation:
                dissipated += dt * dissipation(rho, m, spec, periodic)
            rho = rho + dt * _laplacian(rho ** m, spec, cfg.boundary)
            neg = rho.min()
            if neg < 0:
                if neg < -1e-12 * rmax:
                    raise FloatingPointError(f"negative density {neg:.3e} at t={t:.6g}")
                audit["clipped_mass"] += float(-rho[rho < 0].sum()) * spec.cell_volume
                rho = np.maximum(rho, 0.0)
            if cfg.boundary == "compact" and _edge_max(rho) > cfg.edge_threshold * rmax:
                raise DomainTooSmallError(f"domain too small: support reached the boundary at t={t:.6g}")
            t += dt
            steps += 1
        audit.update(mass_drift=abs(rho.sum() - mass0) * spec.cell_volume, steps=steps)
        yield t_out, rho, dissipated, steps


def pme_evolve(initial: GridMeasure, cfg: PMEConfig, t_start: float = 0.0,
               until: Callable[[PMEState], bool] | None = None) -> list[PMEState]:
    """Explicit conservative finite-volume evolution with adaptive time steps.

    Returns states at ``t_start`` and at every output time. With the default
    ``compact`` boundary the box stands in for whole space: a run whose density
    reaches the outermost cells (above ``edge_threshold`` times the maximum)
    raises ``DomainTooSmallError``. ``until`` stops the run after the first
    emitted state for which it returns True. The last state carries an audit
    dict (mass drift, clipped mass, step count).
    """
    spec = initial.spec
    audit: dict = {}
    states = [PMEState(initial, t_start, cfg.m)]
    if until is None or not until(states[0]):
        for t, rho, diss, steps in _march(np.array(initial.density, dtype=float), spec, cfg, t_start, audit):
            states.append(PMEState(GridMeasure(spec, rho, normalize=False), t, cfg.m, diss, steps))
            if until is not None and until(states[-1]):
                break
    object.__setattr__(states[-1], "audit", dict(audit) or {"mass_drift": 0.0, "clipped_mass": 0.0, "steps": 0})
    return states


def comparison_probe(spec: GridSpec, lower: np.ndarray, upper: np.ndarray, cfg: PMEConfig) -> float:
    """max over frames and cells of rho_t - sigma_t for ordered data rho_0 <= sigma_0 (unnormalised).

    Both runs use the same fixed step ``cfg.dt_max``, which must satisfy the
    stability limit of the larger density.
    """
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    if np.any(lower > upper):
        raise ValueError("initial data are not ordered")
    if cfg.dt_max is None:
        raise ValueError("a common fixed step dt_max is required")
    limit = cfg.cfl * min(spec.dx) ** 2 / (2 * spec.D * cfg.m * upper.max() ** (cfg.m - 1.0))
    if cfg.dt_max > limit:
        raise ValueError("dt_max exceeds the stability limit of the upper density")
    worst = float((lower - upper).max())
    runs = zip(_march(lower.copy(), spec, cfg, 0.0, {}), _march(upper.copy(), spec, cfg, 0.0, {}))
    for (_, a, _, _), (_, b, _, _) in runs:
        worst = max(worst, float((a - b).max()))
    return worst


def run_manifest(states: Sequence[PMEState], cfg: PMEConfig) -> str:
    audit = states[-1].audit or {}
    return json.dumps(jsonable({
        "config": cfg.to_dict(),
        "grid": states[0].measure.spec.to_dict(),
        "frames": [{"t": s.t, "E_m": s.E, "dissipated": s.dissipated, "steps": s.steps} for s in states],
        "audit": audit,
    }), indent=2)


def l1_distance(a: np.ndarray, b: np.ndarray, cell_volume: float) -> float:
    return float(np.abs(a - b).sum() * cell_volume)


# ---------------------------------------------------------------------------

def support_radius(state: PMEState, threshold: float = SUPPORT_THRESHOLD, center=None) -> float:
    """Largest distance from the centre (default: centre of mass) to a cell above threshold, plus half a cell."""
    spec = state.measure.spec
    mask = state.support(threshold)
    pts = mask.points()
    if center is None:
        center = state.measure.masses.ravel() @ spec.points()
    d = np.sqrt(((pts - center) ** 2).sum(1))
    return float(d.max() + 0.5 * min(spec.dx))


@dataclass
class SupportFit:
    exponent: float
    prefactor: float
    R0: float
    times: list
    radii: list
    inclusion_ok: bool
    expected: float | None = None


def support_growth_fit(states: Sequence[PMEState], threshold: float = SUPPORT_THRESHOLD,
                       expected_exponent: float | None = None) -> SupportFit:
    """Least-squares slope of log r(t) against log t over the frames after the first.

    Times are those carried by the states (the Barenblatt clock when the run is
    started from a Barenblatt profile). Inclusion is checked in the form
    r(t) <= R0 + C_hat (t - t_start)^b with R0 the initial radius and C_hat the
    fitted prefactor of r = C_hat t^b.
    """
    if len(states) < 8:
        raise ValueError("need at least 8 frames")
    t = np.array([s.t for s in states])
    if t[0] <= 0:
        t_fit, states_fit = t[1:], states[1:]
    else:
        t_fit, states_fit = t, states
    r = np.array([support_radius(s, threshold) for s in states_fit])
    A = np.vstack([np.log(t_fit), np.ones_like(t_fit)]).T
    slope, icpt = np.linalg.lstsq(A, np.log(r), rcond=None)[0]
    pref = math.exp(icpt)
    R0 = support_radius(states[0], threshold)
    b = expected_exponent if expected_exponent is not None else slope
    tau = t_fit - t[0]
    ok = bool(np.all(r <= R0 + pref * tau ** b + 2 * min(states[0].measure.spec.dx)))
    return SupportFit(float(slope), pref, R0, t_fit.tolist(), r.tolist(), ok, expected_exponent)


def entropy_dissipation_audit(states: Sequence[PMEState], m: float | None = None,
                              periodic: bool = False) -> ExperimentReport:
    """Check dE_m/dt = -int |v|^2 rho frame by frame and in integrated form."""
    m = m if m is not None else states[0].m
    spec = states[0].measure.spec
    rep = ExperimentReport("pme-dissipation", inputs={"m": m, "frames": len(states)})
    E = [renyi_entropy(s.density, m, spec.cell_volume) for s in states]
    I = [dissipation(s.density, m, spec, periodic) for s in states]
    rows = []
    worst = 0.0
    for k in range(len(states) - 1):
        dt = states[k + 1].t - states[k].t
        dEdt = (E[k + 1] - E[k]) / dt
        diss = (states[k + 1].dissipated - states[k].dissipated) / dt if states[k + 1].dissipated else 0.5 * (I[k] + I[k + 1])
        res = abs(dEdt + diss)
        rel = res / max(abs(dEdt), 1e-300)
        worst = max(worst, rel if abs(dEdt) > 0 else res)
        rows.append([states[k].t, states[k + 1].t, dEdt, -diss, res, rel])
    rep.add_table("dissipation", ["t0", "t1", "dE_dt", "minus_dissipation", "residual", "relative"], rows)
    drop = E[0] - E[-1]
    integ = states[-1].dissipated
    rep.quantities.update({"E_initial": E[0], "E_final": E[-1], "entropy_drop": drop,
                           "integrated_dissipation": integ, "worst_frame_relative_residual": worst})
    if drop > 0:
        rep.check("integrated_identity", "time-integrated dissipation equals the entropy drop",
                  abs(integ - drop) / drop, 0.02, "<=")
    else:
        rep.check("stationary", "no entropy change and no dissipation for a steady state",
                  abs(integ) + abs(drop), 1e-12, "<=")
    rep.assert_true("monotone", "entropy nonincreasing frame to frame",
                    all(b <= a + 1e-15 * max(1.0, abs(a)) for a, b in zip(E, E[1:])))
    return rep.finish()


def w2_budget_check(initial: PMEState, state: PMEState):
    """Return (W2^2, t (E(f) - E(rho_t)), slack) with t the elapsed time."""
    spec = initial.measure.spec
    tau = state.t - initial.t
    if tau == 0:
        return 0.0, 0.0, 0.0
    if spec.D == 1:
        w2sq = w2_1d(initial.measure, state.measure) ** 2
    else:
        w2sq = w2_lp(atomize(initial.measure), atomize(state.measure)).cost
    budget = tau * (initial.E - state.E)
    return w2sq, budget, budget - w2sq


def boundary_obstruction_report(state: PMEState, S: SupportMask | None = None, initial: PMEState | None = None,
                                zero_threshold: float = 1e-14) -> ExperimentReport:
    """Density ratio of a PME frame on a mask containing its support.

    By default S is the set of cells with strictly positive density. When the
    initial state is given, the frame's transport cost W2^2 is matched by
    Gaussian smoothing of the initial density (beta = W2^2 / D) and the smoothed
    ratio on S is reported next to its exp(M/(2 beta)) bound.
    """
    S = S if S is not None else state.measure.support(0.0)
    rep = ExperimentReport("pme-obstruction", inputs={"t": state.t, "m": state.m, "zero_threshold": zero_threshold})
    ratio = density_ratio(state.measure, S, zero_threshold)
    vals = state.density[S.flags]
    rep.quantities.update({"ratio": ratio, "min_density": float(vals.min()), "max_density": float(vals.max()),
                           "mask_cells": S.count})
    rep.check("ratio_infinite", "compactly supported frame has unbounded density ratio on its support",
              ratio, math.inf, "==")
    if initial is not None:
        spec = state.measure.spec
        w2sq, _, _ = w2_budget_check(initial, state)
        beta = max(w2sq, 1e-300) / spec.D
        lr = log_ratio_smoothed(initial.measure, S, beta)
        M = geometric_constant(S, initial.measure.support())
        rep.quantities.update({"matched_beta": beta, "smoothed_log_ratio": lr, "M": M})
        rep.bounds["log_ratio_bound"] = M / (2 * beta)
        rep.check("smoothed_finite", "matched Gaussian smoothing has finite ratio within exp(M/(2 beta))",
                  lr, M / (2 * beta), "<=")
    return rep.finish()
