"""Quadratic Wasserstein distances, couplings, monotone maps and displacement paths.

Three solvers share one cost convention (the cost of the returned coupling):

* ``w2_1d``: exact in 1D through quantile functions,
* ``w2_lp``: exact linear program on atoms (HiGHS), with dual potentials,
* ``sinkhorn_w2``: log-domain entropic scaling for larger instances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import logsumexp

from .grid import GridMeasure, GridSpec

__all__ = [
    "DiscreteMeasure",
    "TransportPlan",
    "QuantileFunction",
    "MonotoneMap1D",
    "SinkhornConvergenceError",
    "atomize",
    "quantile_function",
    "w2_1d",
    "w2_lp",
    "sinkhorn_w2",
    "mccann_interpolate",
    "mccann_quantile",
    "mccann_path",
    "bb_action",
    "BBAction",
]

WEIGHT_TOL = 1e-10
LP_CAP = 400


class DiscreteMeasure:
    """Finitely many weighted atoms in R^D."""

    def __init__(self, points, weights=None, normalize: bool = False):
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if points.ndim != 2 or len(points) == 0:
            raise ValueError("points must be a nonempty (n, D) array")
        n = len(points)
        weights = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
        if weights.shape != (n,):
            raise ValueError("one weight per atom required")
        if np.any(weights < 0):
            raise ValueError("negative weights")
        total = weights.sum()
        if normalize:
            if total <= 0:
                raise ValueError("zero total weight")
            weights = weights / total
        elif abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {total}, expected 1")
        points.setflags(write=False)
        weights.setflags(write=False)
        self.points = points
        self.weights = weights

    @property
    def D(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return len(self.weights)

    def __repr__(self):
        return f"DiscreteMeasure(n={len(self)}, D={self.D})"

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def covariance(self) -> np.ndarray:
        c = self.points - self.mean()
        return (c * self.weights[:, None]).T @ c

    def diameter(self) -> float:
        p = self.points[self.weights > 0]
        d2 = ((p[:, None, :] - p[None, :, :]) ** 2).sum(-1)
        return float(np.sqrt(d2.max()))


def atomize(mu, drop_zero: bool = True) -> DiscreteMeasure:
    """Place each cell's mass at its centre."""
    if isinstance(mu, DiscreteMeasure):
        return mu
    w = mu.masses.ravel()
    pts = mu.spec.points()
    if drop_zero:
        keep = w > 0
        pts, w = pts[keep], w[keep]
    return DiscreteMeasure(pts, w, normalize=True)


@dataclass
class TransportPlan:
    mu: DiscreteMeasure
    nu: DiscreteMeasure
    coupling: np.ndarray
    cost: float
    phi: np.ndarray | None = None
    psi: np.ndarray | None = None
    backend: str = ""
    info: dict = field(default_factory=dict)

    @property
    def w2(self) -> float:
        return float(np.sqrt(max(self.cost, 0.0)))

    def marginal_error(self) -> float:
        return float(np.abs(self.coupling.sum(1) - self.mu.weights).sum()
                     + np.abs(self.coupling.sum(0) - self.nu.weights).sum())

    def dual_value(self) -> float:
        if self.phi is None:
            raise ValueError("plan carries no potentials")
        return float(self.phi @ self.mu.weights + self.psi @ self.nu.weights)

    def to_json(self) -> str:
        tolist = lambda a: None if a is None else np.asarray(a).tolist()
        return json.dumps({
            "cost": self.cost,
            "coupling": self.coupling.ravel().tolist(),
            "shape": list(self.coupling.shape),
            "phi": tolist(self.phi),
            "psi": tolist(self.psi),
            "backend": self.backend,
        })


def _sqdist(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - y[None, :, :]) ** 2).sum(-1)


# ---------------------------------------------------------------------------
# 1D: quantile functions

class QuantileFunction:
    """Nondecreasing piecewise-linear function on [0, 1], possibly with jumps.

    Stored as segments ``[q0, q1] -> [x0, x1]`` with ``q0 < q1``; a jump is the
    gap between consecutive segment values.
    """

    def __init__(self, q0, q1, x0, x1):
        self.q0, self.q1 = np.asarray(q0, float), np.asarray(q1, float)
        self.x0, self.x1 = np.asarray(x0, float), np.asarray(x1, float)

    @property
    def breaks(self) -> np.ndarray:
        return np.concatenate([self.q0, self.q1[-1:]])

    def _locate(self, q):
        k = np.searchsorted(self.q1, q, side="left")
        return np.clip(k, 0, len(self.q1) - 1)

    def on_segments(self, a, b):
        """Values at the ends of subintervals (a, b) lying inside single segments."""
        k = self._locate(0.5 * (a + b))
        slope = (self.x1[k] - self.x0[k]) / (self.q1[k] - self.q0[k])
        return self.x0[k] + slope * (a - self.q0[k]), self.x0[k] + slope * (b - self.q0[k])

    def __call__(self, q):
        q = np.asarray(q, float)
        k = self._locate(q)
        slope = (self.x1[k] - self.x0[k]) / (self.q1[k] - self.q0[k])
        return self.x0[k] + slope * (q - self.q0[k])

    def combine(self, other: "QuantileFunction", a: float, b: float) -> "QuantileFunction":
        """``a*self + b*other`` on the merged breakpoints."""
        qs = np.union1d(self.breaks, other.breaks)
        lo, hi = qs[:-1], qs[1:]
        keep = hi > lo
        lo, hi = lo[keep], hi[keep]
        s0, s1 = self.on_segments(lo, hi)
        o0, o1 = other.on_segments(lo, hi)
        return QuantileFunction(lo, hi, a * s0 + b * o0, a * s1 + b * o1)

    def cdf(self, x) -> np.ndarray:
        """Generalised inverse: F(x) = |{q : Q(q) <= x}|."""
        x = np.asarray(x, float)
        out = np.zeros(x.shape)
        for q0, q1, x0, x1 in zip(self.q0, self.q1, self.x0, self.x1):
            if x1 > x0:
                out += (q1 - q0) * np.clip((x - x0) / (x1 - x0), 0.0, 1.0)
            else:
                out += (q1 - q0) * (x >= x0)
        return out

    def second_moment_gap(self, other: "QuantileFunction") -> float:
        """Exact int_0^1 (Q_self - Q_other)^2 dq."""
        diff = self.combine(other, 1.0, -1.0)
        h = diff.q1 - diff.q0
        return float(np.sum(h * (diff.x0 ** 2 + diff.x0 * diff.x1 + diff.x1 ** 2) / 3.0))


def quantile_function(mu) -> QuantileFunction:
    """Quantile function of a 1D grid measure (piecewise-constant density) or atom set."""
    if isinstance(mu, QuantileFunction):
        return mu
    if isinstance(mu, GridMeasure):
        if mu.spec.D != 1:
            raise ValueError("quantile functions need D=1")
        w = mu.masses
        edges = mu.spec.edges(0)
        keep = w > 0
        cum = np.concatenate([[0.0], np.cumsum(w[keep])])
        cum /= cum[-1]
        return QuantileFunction(cum[:-1], cum[1:], edges[:-1][keep], edges[1:][keep])
    if isinstance(mu, DiscreteMeasure):
        if mu.D != 1:
            raise ValueError("quantile functions need D=1")
        order = np.argsort(mu.points[:, 0], kind="stable")
        x, w = mu.points[order, 0], mu.weights[order]
        keep = w > 0
        x, w = x[keep], w[keep]
        cum = np.concatenate([[0.0], np.cumsum(w)])
        cum /= cum[-1]
        return QuantileFunction(cum[:-1], cum[1:], x, x)
    raise TypeError(f"cannot build a quantile function from {type(mu).__name__}")


def w2_1d(mu, nu, n_quantiles: int | None = None, atomize_grid: bool = False) -> float:
    """W2 between 1D measures via their quantile functions.

    Grid measures are read as piecewise-constant densities unless ``atomize_grid``.
    With ``n_quantiles=None`` the quantile integral is evaluated exactly on the
    merged breakpoints; an integer selects a midpoint rule with that many nodes.
    """
    for m in (mu, nu):
        D = m.spec.D if isinstance(m, GridMeasure) else (1 if isinstance(m, QuantileFunction) else m.D)
        if D != 1:
            raise ValueError(f"w2_1d needs 1D measures, got D={D}")
    if atomize_grid:
        mu, nu = (atomize(m) if isinstance(m, GridMeasure) else m for m in (mu, nu))
    Qm, Qn = quantile_function(mu), quantile_function(nu)
    if n_quantiles is None:
        return float(np.sqrt(max(Qm.second_moment_gap(Qn), 0.0)))
    q = (np.arange(n_quantiles) + 0.5) / n_quantiles
    return float(np.sqrt(np.mean((Qm(q) - Qn(q)) ** 2)))


class MonotoneMap1D:
    """Nondecreasing map x -> Q_nu(F_mu(x)) pushing mu onto nu."""

    def __init__(self, mu, nu):
        self.source = quantile_function(mu)
        self.target = quantile_function(nu)

    def __call__(self, x):
        return self.target(np.clip(self.source.cdf(x), 0.0, 1.0))


# ---------------------------------------------------------------------------
# exact LP

def w2_lp(mu: DiscreteMeasure, nu: DiscreteMeasure, cap: int = LP_CAP) -> TransportPlan:
    """Exact optimal coupling by linear programming on the transportation polytope."""
    mu, nu = atomize(mu), atomize(nu)
    n, m = len(mu), len(nu)
    if n > cap or m > cap:
        raise ValueError(f"LP size {n}x{m} exceeds cap {cap}x{cap}; use sinkhorn_w2 instead")
    if mu.D != nu.D:
        raise ValueError("dimension mismatch")
    C = _sqdist(mu.points, nu.points)
    rows = sparse.kron(sparse.eye(n), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, n)), sparse.eye(m))
    A = sparse.vstack([rows, cols]).tocsc()
    b = np.concatenate([mu.weights, nu.weights])
    res = linprog(C.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    P = np.maximum(res.x.reshape(n, m), 0.0)
    y = res.eqlin.marginals
    phi, psi = y[:n].copy(), y[n:].copy()
    # shift so the potentials are unique up to the usual additive constant
    shift = phi[0]
    phi -= shift
    psi += shift
    return TransportPlan(mu, nu, P, float((P * C).sum()), phi, psi, backend="lp-highs")


# ---------------------------------------------------------------------------
# entropic

class SinkhornConvergenceError(RuntimeError):
    def __init__(self, message, last_error):
        super().__init__(message)
        self.last_error = last_error


def sinkhorn_w2(mu: DiscreteMeasure, nu: DiscreteMeasure, reg: float, tol: float = 1e-9,
                max_iter: int = 100_000, check_every: int = 10) -> TransportPlan:
    """Log-domain Sinkhorn. The reported cost is that of the returned coupling."""
    if reg <= 0:
        raise ValueError("reg must be positive")
    mu, nu = atomize(mu), atomize(nu)
    a, b = mu.weights, nu.weights
    la, lb = np.log(a), np.log(b)
    C = _sqdist(mu.points, nu.points)
    M = -C / reg
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    err = np.inf
    for it in range(1, max_iter + 1):
        f = reg * (la - logsumexp(M + g[None, :] / reg, axis=1))
        g = reg * (lb - logsumexp(M + f[:, None] / reg, axis=0))
        if it % check_every == 0 or it == max_iter:
            logP = M + (f[:, None] + g[None, :]) / reg
            err = float(np.abs(np.exp(logsumexp(logP, axis=1)) - a).sum())
            if err < tol:
                break
    else:
        raise SinkhornConvergenceError(
            f"Sinkhorn did not converge in {max_iter} iterations (marginal error {err:.3e})", err)
    P = np.exp(M + (f[:, None] + g[None, :]) / reg)
    return TransportPlan(mu, nu, P, float((P * C).sum()), f, g, backend="sinkhorn",
                         info={"iterations": it, "marginal_error": err, "reg": reg})


# ---------------------------------------------------------------------------
# displacement interpolation and dynamic action

def _check_t(t):
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")


def mccann_quantile(mu, nu, t: float) -> QuantileFunction:
    """Quantile function (1-t) Q_mu + t Q_nu of the displacement interpolant."""
    _check_t(t)
    return quantile_function(mu).combine(quantile_function(nu), 1.0 - t, t)


def mccann_interpolate(mu, nu, t: float, n_atoms: int = 4096) -> DiscreteMeasure:
    """Displacement interpolant as equal-weight atoms at the quantile midpoints of mu."""
    _check_t(t)
    q = (np.arange(n_atoms) + 0.5) / n_atoms
    x = (1.0 - t) * quantile_function(mu)(q) + t * quantile_function(nu)(q)
    return DiscreteMeasure(x)


def _grid_slice(Qt: QuantileFunction, Qmu: QuantileFunction, Qnu: QuantileFunction, spec: GridSpec):
    """Cell masses of the interpolant and mass-averaged cell velocities."""
    Fe = np.clip(Qt.cdf(spec.edges(0)), 0.0, 1.0)
    mass = np.diff(Fe)
    # cumulative velocity integral V(q) = int_0^q (Qnu - Qmu)
    vel = Qnu.combine(Qmu, 1.0, -1.0)
    h = vel.q1 - vel.q0
    cumV = np.concatenate([[0.0], np.cumsum(h * 0.5 * (vel.x0 + vel.x1))])

    def V(q):
        k = vel._locate(q)
        slope = (vel.x1[k] - vel.x0[k]) / h[k]
        s = q - vel.q0[k]
        return cumV[k] + vel.x0[k] * s + 0.5 * slope * s * s

    flux = np.diff(V(Fe))
    v = np.divide(flux, mass, out=np.zeros_like(mass), where=mass > 1e-300)
    return mass / spec.dx[0], v


def mccann_path(mu: GridMeasure, nu: GridMeasure, n_steps: int = 64, spec: GridSpec | None = None):
    """Eulerian samples of the 1D displacement path at midpoint times.

    Returns ``(path, dt)`` with ``path`` a list of ``(GridMeasure, velocity)`` on
    ``spec`` (default: the grid of ``mu``), suitable for :func:`bb_action`.
    """
    spec = spec or mu.spec
    Qmu, Qnu = quantile_function(mu), quantile_function(nu)
    dt = 1.0 / n_steps
    path = []
    for k in range(n_steps):
        t = (k + 0.5) * dt
        rho, v = _grid_slice(Qmu.combine(Qnu, 1.0 - t, t), Qmu, Qnu, spec)
        path.append((GridMeasure(spec, rho), v))
    return path, dt


@dataclass
class BBAction:
    action: float
    residual: float
    residual_max: float

    def __float__(self):
        return self.action


def _upwind_div(rho: np.ndarray, v: np.ndarray, spec: GridSpec) -> np.ndarray:
    div = np.zeros_like(rho)
    for a in range(spec.D):
        va = v if spec.D == 1 else v[..., a]
        r = np.moveaxis(rho, a, 0)
        u = np.moveaxis(va, a, 0)
        vf = 0.5 * (u[1:] + u[:-1])
        flux = np.where(vf > 0, r[:-1], r[1:]) * vf
        flux = np.concatenate([np.zeros_like(flux[:1]), flux, np.zeros_like(flux[:1])])
        div += np.moveaxis(np.diff(flux, axis=0), 0, a) / spec.dx[a]
    return div


def bb_action(path: Sequence, dt: float) -> BBAction:
    """Kinetic action 1/2 sum_t sum_cells |v|^2 rho dx^D dt with its continuity residual.

    ``path`` holds ``(GridMeasure, velocity)`` pairs at equally spaced times; the
    velocity has the grid shape in 1D and ``shape + (D,)`` in 2D. The residual
    is the L1 norm of d_t rho + div(rho v) (upwind fluxes, trapezoid in time)
    summed over consecutive frames.
    """
    if len(path) == 0:
        return BBAction(0.0, 0.0, 0.0)
    spec = path[0][0].spec
    action = 0.0
    divs = []
    for rho, v in path:
        if rho.spec != spec:
            raise ValueError("mismatched grid specs along the path")
        v = np.asarray(v, float)
        speed2 = v ** 2 if spec.D == 1 else (v ** 2).sum(-1)
        action += 0.5 * float((speed2 * rho.density).sum()) * spec.cell_volume * dt
        divs.append(_upwind_div(rho.density, v, spec))
    res, res_max = 0.0, 0.0
    for k in range(len(path) - 1):
        r = (path[k + 1][0].density - path[k][0].density) / dt + 0.5 * (divs[k] + divs[k + 1])
        res += float(np.abs(r).sum()) * spec.cell_volume * dt
        res_max = max(res_max, float(np.abs(r).max()))
    return BBAction(action, res, res_max)
