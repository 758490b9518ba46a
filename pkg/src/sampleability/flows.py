"""Lagrangian flows of velocity fields, Gronwall Lipschitz certificates, porous
medium velocity bounds, and the endpoint-constrained dynamic transport check."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .grid import GridMeasure, GridSpec, density_ratio
from .heat import _PiecewiseLinearMap, generation_bound
from .pme import PMEConfig, PMEState, pme_evolve
from .projection import SampleableSpec, project_sampleable
from .report import ExperimentReport
from .spectral import TorusField, TorusTrajectory
from .transport import DiscreteMeasure, bb_action, mccann_path, quantile_function, w2_1d

__all__ = [
    "VelocityField",
    "ConstantField",
    "LinearField",
    "GridField",
    "FlowMap",
    "DomainExitError",
    "VacuumError",
    "integrate_flow",
    "LipschitzCertificate",
    "lipschitz_certificate",
    "pme_velocity",
    "pme_velocity_field",
    "VelocityBound",
    "pme_velocity_bound",
    "relaxed_membership",
    "constrained_bb_certificate",
]


class DomainExitError(RuntimeError):
    pass


class VacuumError(ValueError):
    pass


class VelocityField:
    """v(t, x) for x of shape (n, D); ``dv_norm(t)`` bounds sup_x |Dv_t(x)| (operator norm)."""

    D: int = 1
    periodic: bool = False

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def dv_norm(self, t: float) -> float:
        raise NotImplementedError

    def check_domain(self, x: np.ndarray) -> None:
        pass


class ConstantField(VelocityField):
    def __init__(self, c):
        self.c = np.atleast_1d(np.asarray(c, float))
        self.D = len(self.c)

    def __call__(self, t, x):
        return np.broadcast_to(self.c, x.shape).copy()

    def dv_norm(self, t):
        return 0.0


class LinearField(VelocityField):
    """v(x) = A x."""

    def __init__(self, A):
        self.A = np.atleast_2d(np.asarray(A, float))
        self.D = self.A.shape[0]
        self._norm = float(np.linalg.norm(self.A, 2))

    def __call__(self, t, x):
        return x @ self.A.T

    def dv_norm(self, t):
        return self._norm


class GridField(VelocityField):
    """Velocity sampled at cell centres, piecewise linear in space and in time.

    ``frames`` has shape (n_times, *grid shape) in 1D and (n_times, *grid shape, D)
    in 2D. With ``periodic`` the grid is treated as a torus of side ``hi - lo``.
    ``dv_norm`` is the exact Lipschitz constant of the interpolant of each frame
    (max over cells of corner Jacobians) and is combined convexly in time, which
    bounds the interpolated field from above.
    """

    def __init__(self, spec: GridSpec, times, frames, periodic: bool = False):
        self.spec = spec
        self.D = spec.D
        self.periodic = periodic
        self.times = np.atleast_1d(np.asarray(times, float))
        frames = np.asarray(frames, float)
        if self.D == 1:
            frames = frames[..., None]
        self.frames = frames.reshape((len(self.times),) + spec.shape + (self.D,))
        self._norms = np.array([self._frame_lip(f) for f in self.frames])

    def _padded(self, f):
        if not self.periodic:
            return f
        return np.pad(f, [(0, 1)] * self.D + [(0, 0)], mode="wrap")

    def _frame_lip(self, f) -> float:
        g = self._padded(f)
        dx = self.spec.dx
        if self.D == 1:
            return float(np.abs(np.diff(g[:, 0]) / dx[0]).max())
        dxv = np.diff(g, axis=0) / dx[0]  # (nx-1, ny, 2): d v / dx along x-edges
        dyv = np.diff(g, axis=1) / dx[1]
        best = 0.0
        for ex in (slice(None, -1), slice(1, None)):
            for ey in (slice(None, -1), slice(1, None)):
                J = np.stack([dxv[:, ey, :], dyv[ex, :, :]], axis=-1)  # (cells, cells, comp, deriv)
                s = np.linalg.svd(J, compute_uv=False)[..., 0]
                best = max(best, float(s.max()))
        return best

    def _frame_weights(self, t):
        if len(self.times) == 1:
            return 0, 0, 0.0
        t = min(max(t, self.times[0]), self.times[-1])
        i = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        s = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return i, i + 1, s

    def _interp_frame(self, f, x):
        spec = self.spec
        g = self._padded(f)
        idx, wts = [], []
        for a in range(self.D):
            u = (x[:, a] - spec.lo[a]) / spec.dx[a] - 0.5
            if self.periodic:
                u = np.mod(u, spec.n[a])
            i0 = np.clip(np.floor(u).astype(int), 0, g.shape[a] - 2)
            idx.append(i0)
            wts.append(u - i0)
        if self.D == 1:
            w = wts[0][:, None]
            return (1 - w) * g[idx[0]] + w * g[idx[0] + 1]
        wx, wy = wts[0][:, None], wts[1][:, None]
        i, j = idx
        return ((1 - wx) * (1 - wy) * g[i, j] + wx * (1 - wy) * g[i + 1, j]
                + (1 - wx) * wy * g[i, j + 1] + wx * wy * g[i + 1, j + 1])

    def __call__(self, t, x):
        i, k, s = self._frame_weights(t)
        out = self._interp_frame(self.frames[i], x)
        if s > 0:
            out = (1 - s) * out + s * self._interp_frame(self.frames[k], x)
        return out

    def dv_norm(self, t):
        i, k, s = self._frame_weights(t)
        return float((1 - s) * self._norms[i] + s * self._norms[k])

    def check_domain(self, x):
        if self.periodic:
            return
        dx = np.asarray(self.spec.dx)
        lo = np.asarray(self.spec.lo) + 0.5 * dx
        hi = np.asarray(self.spec.hi) - 0.5 * dx
        if np.any(x < lo) or np.any(x > hi):
            raise DomainExitError("trajectory left the grid")


class _Reversed(VelocityField):
    def __init__(self, v: VelocityField, T: float):
        self.v, self.T, self.D, self.periodic = v, T, v.D, v.periodic

    def __call__(self, t, x):
        return -self.v(self.T - t, x)

    def dv_norm(self, t):
        return self.v.dv_norm(self.T - t)

    def check_domain(self, x):
        self.v.check_domain(x)


@dataclass
class FlowMap:
    field: VelocityField
    points: np.ndarray  # (n, D) initial positions
    times: np.ndarray
    trajectories: np.ndarray  # (n_times, n, D)
    dv_integral: np.ndarray  # cumulative int_0^t |Dv_s|_inf ds

    @property
    def final(self) -> np.ndarray:
        return self.trajectories[-1]

    def inverse(self, y: np.ndarray | None = None) -> "FlowMap":
        """Backward integration from time T (default: from this flow's endpoints)."""
        T = float(self.times[-1])
        y = self.final if y is None else y
        dt = self.times[1] - self.times[0] if len(self.times) > 1 else T
        return integrate_flow(_Reversed(self.field, T), y, T, dt)

    def to_csv(self, path) -> None:
        n, D = self.points.shape
        with open(path, "w") as fh:
            fh.write("t,point," + ",".join(f"x{a}" for a in range(D)) + ",dv_integral\n")
            for k, t in enumerate(self.times):
                for i in range(n):
                    xs = ",".join(repr(float(v)) for v in self.trajectories[k, i])
                    fh.write(f"{float(t)!r},{i},{xs},{float(self.dv_integral[k])!r}\n")


def integrate_flow(v: VelocityField, points, T: float, dt: float, check_stiffness: bool = True) -> FlowMap:
    """Classical RK4 for dX/dt = v(t, X); Simpson's rule for int |Dv|_inf along the same steps."""
    x = np.asarray(points, float)
    if x.ndim == 1:
        x = x[:, None]
    n_steps = max(1, int(math.ceil(T / dt - 1e-12)))
    h = T / n_steps
    traj = [x.copy()]
    times = [0.0]
    integ = [0.0]
    acc = 0.0
    t = 0.0
    for _ in range(n_steps):
        n0, n1, n2 = v.dv_norm(t), v.dv_norm(t + 0.5 * h), v.dv_norm(t + h)
        if check_stiffness and max(n0, n1, n2) * h >= 0.1:
            raise ValueError("time step too large for the field (|Dv| dt >= 0.1)")
        k1 = v(t, x)
        k2 = v(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = v(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = v(t + h, x + h * k3)
        x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        v.check_domain(x)
        acc += h / 6.0 * (n0 + 4 * n1 + n2)
        t += h
        traj.append(x.copy())
        times.append(t)
        integ.append(acc)
    return FlowMap(v, np.asarray(points, float).reshape(traj[0].shape), np.array(times), np.array(traj),
                   np.array(integ))


@dataclass
class LipschitzCertificate:
    forward: float
    inverse: float
    bound: float
    dv_integral: float

    @property
    def forward_slack(self) -> float:
        return self.bound - self.forward

    @property
    def inverse_slack(self) -> float:
        return self.bound - self.inverse

    def holds(self, tol: float = 1e-9) -> bool:
        return self.forward <= self.bound + tol and self.inverse <= self.bound + tol


def lipschitz_certificate(flow: FlowMap, index: int = -1) -> LipschitzCertificate:
    """Empirical max |X(x)-X(y)|/|x-y| and its inverse over all sample pairs, with exp(int |Dv|)."""
    x0 = flow.points
    if len(x0) < 2:
        raise ValueError("need at least two sample points")
    d0 = pdist(x0)
    if np.any(d0 == 0):
        raise ValueError("coincident sample points")
    d1 = pdist(flow.trajectories[index])
    if np.any(d1 == 0):
        raise ValueError("coincident image points")
    integ = float(flow.dv_integral[index])
    return LipschitzCertificate(float((d1 / d0).max()), float((d0 / d1).max()), math.exp(integ), integ)


# ---------------------------------------------------------------------------
# porous medium velocity  v = -grad(m/(m-1) rho^(m-1))

def _grad(f, dx, periodic):
    if periodic:
        return [(np.roll(f, -1, axis=a) - np.roll(f, 1, axis=a)) / (2 * dx[a]) for a in range(f.ndim)]
    return [np.gradient(f, dx[a], axis=a) for a in range(f.ndim)]


def _hessian_norm(f, dx, periodic):
    g = _grad(f, dx, periodic)
    H = [[_grad(gi, dx, periodic)[j] for j in range(f.ndim)] for gi in g]
    if f.ndim == 1:
        return np.abs(H[0][0])
    M = np.stack([np.stack(row, -1) for row in H], -2)
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    return np.abs(np.linalg.eigvalsh(M)).max(-1)


def _density_grid(state):
    if isinstance(state, TorusField):
        b = state.basis
        return state.density(), np.full(b.D, b.L / b.N), True
    if isinstance(state, PMEState):
        return state.density, state.measure.spec.dx, False
    if isinstance(state, GridMeasure):
        return state.density, state.spec.dx, False
    raise TypeError("expected TorusField, PMEState or GridMeasure")


def pme_velocity(rho: np.ndarray, m: float, dx, periodic: bool) -> np.ndarray:
    """-grad(m/(m-1) rho^(m-1)) by centred differences; shape (*grid, D)."""
    p = (m / (m - 1.0)) * rho ** (m - 1.0)
    return -np.stack(_grad(p, dx, periodic), axis=-1)


def pme_velocity_field(traj: TorusTrajectory, m: float | None = None) -> GridField:
    """Periodic GridField carrying the porous medium velocity along a torus trajectory."""
    m = traj.m if m is None else m
    b = traj.start.basis
    spec = GridSpec.make(b.D, -0.5 * b.L / b.N, b.L - 0.5 * b.L / b.N, b.N)
    frames = [pme_velocity(r, m, spec.dx, True) for r in traj.densities()]
    return GridField(spec, traj.times, frames, periodic=True)


@dataclass
class VelocityBound:
    direct: float
    bound: float
    m: float

    @property
    def ok(self) -> bool:
        return self.direct <= self.bound * (1 + 1e-2) + 1e-10


def pme_velocity_bound(state, m: float, floor: float = 1e-12) -> VelocityBound:
    """Direct sup |Dv| next to m sup(rho^(m-2)) |D^2 rho| + m |m-2| sup(rho^(m-3)) |grad rho|^2.

    Norms are sup norms of centred finite differences; the powers of rho are
    taken inside the sup so the expression stays an upper bound for every m.
    """
    rho, dx, periodic = _density_grid(state)
    if rho.min() < floor and m < 2:
        raise VacuumError("bound inapplicable at vacuum")
    p = (m / (m - 1.0)) * rho ** (m - 1.0)
    direct = float(_hessian_norm(p, dx, periodic).max())
    g = _grad(rho, dx, periodic)
    grad2 = float(max((sum(gi ** 2 for gi in g)).max(), 0.0))
    hess = float(_hessian_norm(rho, dx, periodic).max())
    with np.errstate(divide="ignore"):
        s2 = float(np.max(rho ** (m - 2.0))) if m != 2 else 1.0
        s3 = float(np.max(rho ** (m - 3.0))) if m != 2 else 0.0
    second = m * abs(m - 2.0) * s3 * grad2 if m != 2 else 0.0
    return VelocityBound(direct, m * s2 * hess + second, m)


# ---------------------------------------------------------------------------
# endpoint-constrained dynamic transport

def relaxed_membership(rho: GridMeasure, spec: SampleableSpec, zero_threshold: float = 1e-14) -> dict:
    """Ratio of ``rho`` on the class ball together with how far ``rho`` is from the class.

    The relaxed test accepts when the ratio on the ball is at most C; the
    violation is quantified by the mass outside the ball and the ratio on the
    density's own support (infinite for a compactly supported front).
    """
    mask = spec.mask(rho.spec)
    ratio_ball = density_ratio(rho, mask, zero_threshold)
    own = rho.support(0.0)
    return {
        "ratio_on_ball": ratio_ball,
        "accepted": ratio_ball <= spec.C,
        "mass_outside_ball": float(rho.masses[~mask.flags].sum()),
        "ratio_on_own_support": density_ratio(rho, own, zero_threshold),
    }


def _composed_generation(mu: GridMeasure, rho: GridMeasure, n_latent: int, jitter: float, seed: int) -> dict:
    """Monotone map T from rho to mu, a perturbed sampler for rho, and eps + Lip(T) eta."""
    Qr, Qm = quantile_function(rho), quantile_function(mu)
    qk = np.linspace(0.0, 1.0, 4097)
    xk, yk = Qr(qk), Qm(qk)
    xk, keep = np.unique(xk, return_index=True)
    T = _PiecewiseLinearMap(xk, yk[keep])
    q = (np.arange(n_latent) + 0.5) / n_latent
    rng = np.random.default_rng(seed)
    sampled = np.sort(Qr(q) + jitter * rng.standard_normal(n_latent))
    eps = w2_1d(DiscreteMeasure(T(Qr((np.arange(8 * n_latent) + 0.5) / (8 * n_latent)))), mu)
    eta = w2_1d(DiscreteMeasure(sampled), rho)
    composite = w2_1d(DiscreteMeasure(T(sampled)), mu)
    return {"eps": eps, "eta": eta, "lip": T.lip, "composite": composite,
            "bound": generation_bound(eps, T.lip, eta)}


def constrained_bb_certificate(mu: GridMeasure, spec: SampleableSpec, pme_cfg: PMEConfig, n_steps: int = 64,
                               n_latent: int = 4096, jitter: float = 0.01, seed: int = 0,
                               **proj_kw) -> ExperimentReport:
    """Geodesic action to the projection versus the porous medium path bound (1D).

    (a) projects mu onto the class and compares the displacement-path action
    with half the squared distance; (b) runs the porous medium flow until the
    ratio on the class ball drops to C and compares half the squared transport
    cost with (t*/2) times the accumulated dissipation; (c) pushes a perturbed
    sampler of the stopped density through the monotone map back to mu.
    """
    if mu.spec.D != 1:
        raise ValueError("the certificate is implemented for D = 1")
    rep = ExperimentReport("constrained-bb", inputs={"C": spec.C, "R": spec.R, "m": pme_cfg.m,
                                                     "n_steps": n_steps, "cadence": pme_cfg.cadence})
    proj = project_sampleable(mu, spec, **proj_kw)
    if not proj.converged:
        raise RuntimeError("projection did not converge")
    half_dc2 = 0.5 * proj.cost ** 2
    if proj.cost == 0:
        geo = 0.0
        residual = 0.0
    else:
        path, dt = mccann_path(mu, proj.nu, n_steps)
        act = bb_action(path, dt)
        geo, residual = act.action, act.residual
    rep.quantities.update({"D_C": proj.cost, "half_D_C_sq": half_dc2, "geodesic_action": geo,
                           "continuity_residual": residual, "fw_gap": proj.gap})
    rel = abs(geo - half_dc2) / half_dc2 if half_dc2 > 0 else abs(geo)
    rep.check("geodesic_action", "displacement path action equals half the squared distance to the class",
              rel, 0.02, "<=")

    # (b) porous medium path from mu, stopped at the first frame accepted by the relaxed test
    states = pme_evolve(mu, pme_cfg, until=lambda s: relaxed_membership(s.measure, spec)["accepted"])
    stop = states[-1] if relaxed_membership(states[-1].measure, spec)["accepted"] else None
    if stop is None:
        rep.notes.append("porous medium flow never met the relaxed membership test within T")
        rep.assert_true("pme_stopped", "porous medium flow reaches the relaxed class test", False)
        return rep.finish()
    memb = relaxed_membership(stop.measure, spec)
    t_star = stop.t - states[0].t
    half_w2 = 0.5 * w2_1d(mu, stop.measure) ** 2
    pme_bound = 0.5 * t_star * stop.dissipated
    rep.quantities.update({"t_star": t_star, "half_w2_pme": half_w2, "pme_path_bound": pme_bound,
                           "pme_bound_slack": pme_bound - half_w2, **{f"stop_{k}": v for k, v in memb.items()}})
    rep.notes.append("the stopped porous medium density only approximately enters the class: "
                     f"mass outside the ball {memb['mass_outside_ball']:.4g}, "
                     f"ratio on its own support {memb['ratio_on_own_support']}")
    rep.check("pme_path_bound", "rescaled porous medium path action bounds half the squared transport cost",
              pme_bound - half_w2, 0.0, ">=", tol=1e-12)
    rep.check("geodesic_below_pme", "constrained geodesic action does not exceed the porous medium path bound",
              half_dc2, pme_bound, "<=", tol=1e-12)
    rep.quantities["geodesic_vs_pme_w2_gap"] = half_w2 - half_dc2

    # (c) composed generation bound
    if t_star > 0:
        gen = _composed_generation(mu, stop.measure, n_latent, jitter, seed)
        rep.quantities.update({f"generation_{k}": v for k, v in gen.items()})
        rep.check("generation", "pushed-forward sampler within eps + Lip(T) eta of mu",
                  gen["composite"], gen["bound"], "<=", tol=1e-12)
    return rep.finish()
