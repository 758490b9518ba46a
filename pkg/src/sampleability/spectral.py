"""Porous medium equation on the flat torus near a constant state.

The density is written rho = rho_bar (1 + eps u) and u is evolved
pseudo-spectrally: the nonlinearity (1 + eps u)^m is formed on the grid, the
Laplacian acts on Fourier modes, products are dealiased by the 2/3 rule, and
time stepping uses the fourth-order exponential time differencing scheme of
Cox and Matthews with contour-integral coefficients.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .report import ExperimentReport
from .torus import TorusBasis

__all__ = [
    "TorusField",
    "TorusTrajectory",
    "AmplitudeError",
    "torus_pme_evolve",
    "ModeDecay",
    "mode_decay_error",
    "coupling_coefficients",
    "coupling_quadrature",
    "quadratic_prediction",
    "sobolev_norm",
    "triad_report",
]


class AmplitudeError(ValueError):
    pass


def _labels(D: int, key):
    """Normalise a mode key to a tuple of per-axis labels."""
    if D == 1 and isinstance(key[0], str):
        return (tuple(key),)
    return tuple(tuple(k) for k in key)


@dataclass(frozen=True, eq=False)
class TorusField:
    basis: TorusBasis
    rho_bar: float
    eps: float
    coeffs: np.ndarray  # real-basis coefficients of u, shape basis.shape

    def __post_init__(self):
        a = np.array(self.coeffs, dtype=float).reshape(self.basis.shape)
        a[(0,) * self.basis.D] = 0.0
        a.setflags(write=False)
        object.__setattr__(self, "coeffs", a)
        if self.rho_bar <= 0:
            raise ValueError("mean density must be positive")
        amp = self.eps * np.abs(self.u()).max()
        if amp > 0.5:
            raise AmplitudeError(f"|eps u|_inf = {amp:.3g} exceeds 1/2")

    @classmethod
    def from_modes(cls, N: int, modes: dict, rho_bar: float = 1.0, eps: float = 1e-3, L: float = 1.0,
                   D: int = 1) -> "TorusField":
        """``modes`` maps labels such as ``('c', 1)`` (1D) or ``(('c', 1), ('s', 2))`` (2D) to amplitudes."""
        basis = TorusBasis(N, L, D)
        a = np.zeros(basis.shape)
        for key, val in modes.items():
            a[basis.mode_index(*_labels(D, key))] = val
        return cls(basis, rho_bar, eps, a)

    @classmethod
    def from_grid(cls, basis: TorusBasis, rho: np.ndarray, rho_bar: float | None = None,
                  eps: float = 1.0) -> "TorusField":
        rho_bar = float(np.mean(rho)) if rho_bar is None else rho_bar
        return cls(basis, rho_bar, eps, basis.analyze((rho / rho_bar - 1.0) / eps))

    def u(self) -> np.ndarray:
        return self.basis.synthesize(self.coeffs)

    def density(self) -> np.ndarray:
        return self.rho_bar * (1.0 + self.eps * self.u())

    def with_coeffs(self, a: np.ndarray) -> "TorusField":
        return TorusField(self.basis, self.rho_bar, self.eps, a)

    def active_modes(self, floor: float = 0.0) -> list[tuple]:
        idx = np.argwhere(np.abs(self.coeffs) > floor)
        modes = self.basis.axis_modes
        labs = [tuple(modes[i] for i in ix) for ix in idx]
        return [l[0] for l in labs] if self.basis.D == 1 else labs


def sobolev_norm(f: TorusField, s: float = 3.0) -> float:
    """sqrt(sum (1 + lambda_j)^s a_j^2) with lambda_j the eigenvalues of -Laplacian."""
    return float(np.sqrt(((1.0 + f.basis.eigenvalues) ** s * f.coeffs ** 2).sum()))


# ---------------------------------------------------------------------------

def _wavenumbers(basis: TorusBasis):
    k = 2 * np.pi * np.fft.fftfreq(basis.N, d=basis.L / basis.N)
    ks = np.meshgrid(*([k] * basis.D), indexing="ij")
    k2 = sum(kk ** 2 for kk in ks)
    idx = np.abs(np.fft.fftfreq(basis.N, d=1.0 / basis.N))
    keep = idx <= basis.N / 3.0
    mask = np.ones(basis.shape, bool)
    for a in range(basis.D):
        sh = [1] * basis.D
        sh[a] = basis.N
        mask = mask & keep.reshape(sh)
    return k2, mask


def _etdrk4_coefficients(Lh: np.ndarray, n_contour: int = 64):
    r = np.exp(1j * np.pi * (np.arange(1, n_contour + 1) - 0.5) / n_contour)
    LR = Lh.ravel()[:, None] + r[None, :]
    Q = np.real(np.mean((np.exp(LR / 2) - 1) / LR, axis=1))
    f1 = np.real(np.mean((-4 - LR + np.exp(LR) * (4 - 3 * LR + LR ** 2)) / LR ** 3, axis=1))
    f2 = np.real(np.mean((2 + LR + np.exp(LR) * (LR - 2)) / LR ** 3, axis=1))
    f3 = np.real(np.mean((-4 - 3 * LR - LR ** 2 + np.exp(LR) * (4 - LR)) / LR ** 3, axis=1))
    sh = Lh.shape
    return Q.reshape(sh), f1.reshape(sh), f2.reshape(sh), f3.reshape(sh)


@dataclass
class TorusTrajectory:
    start: TorusField
    m: float
    times: np.ndarray
    coeffs: np.ndarray  # (n_times, *basis.shape)
    dt: float

    def field(self, i: int) -> TorusField:
        return self.start.with_coeffs(self.coeffs[i])

    def mode(self, label) -> np.ndarray:
        ix = self.start.basis.mode_index(*_labels(self.start.basis.D, label))
        return self.coeffs[(slice(None),) + ix]

    def densities(self) -> np.ndarray:
        b = self.start.basis
        return np.array([self.start.rho_bar * (1 + self.start.eps * b.synthesize(a)) for a in self.coeffs])

    def to_csv(self, path, modes: Sequence | None = None) -> None:
        modes = modes if modes is not None else self.start.active_modes()
        cols = [self.mode(mm) for mm in modes]
        names = ["t"] + ["_".join(f"{k}{j}" for k, j in _labels(self.start.basis.D, mm)) for mm in modes]
        with open(path, "w") as fh:
            fh.write(",".join(names) + "\n")
            for i, t in enumerate(self.times):
                fh.write(",".join([repr(float(t))] + [repr(float(c[i])) for c in cols]) + "\n")


def torus_pme_evolve(f: TorusField, m: float, T: float, dt: float, save_every: int = 1) -> TorusTrajectory:
    """Evolve u for d_t rho = Lap(rho^m) up to time T with step dt (T/dt rounded to whole steps)."""
    if m < 1:
        raise ValueError("m must be at least 1")
    basis = f.basis
    n_steps = max(1, int(round(T / dt)))
    h = T / n_steps
    k2, keep = _wavenumbers(basis)
    gamma = m * f.rho_bar ** (m - 1.0) * k2
    Lh = -gamma * h
    E, E2 = np.exp(Lh), np.exp(Lh / 2)
    Q, f1, f2, f3 = _etdrk4_coefficients(Lh)
    Q, f1, f2, f3 = h * Q, h * f1, h * f2, h * f3
    eps = f.eps
    coef = -k2 * f.rho_bar ** (m - 1.0)

    def nonlin(v_hat):
        if eps == 0 or m == 1:
            return np.zeros_like(v_hat)
        u = np.real(np.fft.ifftn(v_hat))
        x = eps * u
        if np.min(x) <= -1 or np.abs(x).max() > 0.5:
            raise AmplitudeError("positivity or amplitude bound violated during the run")
        g = (np.expm1(m * np.log1p(x)) - m * x) / eps
        return coef * np.fft.fftn(g) * keep

    v = np.fft.fftn(f.u())
    times, out = [0.0], [f.coeffs.copy()]
    for s in range(1, n_steps + 1):
        Nv = nonlin(v)
        a = E2 * v + Q * Nv
        Na = nonlin(a)
        b = E2 * v + Q * Na
        Nb = nonlin(b)
        c = E2 * a + Q * (2 * Nb - Nv)
        Nc = nonlin(c)
        v = E * v + Nv * f1 + 2 * (Na + Nb) * f2 + Nc * f3
        if s % save_every == 0 or s == n_steps:
            u = np.real(np.fft.ifftn(v))
            if eps * np.abs(u).max() > 0.5 or np.min(1 + eps * u) <= 0:
                raise AmplitudeError("positivity or amplitude bound violated during the run")
            times.append(s * h)
            out.append(basis.analyze(u))
    return TorusTrajectory(f, m, np.array(times), np.array(out), h)


# ---------------------------------------------------------------------------

@dataclass
class ModeDecay:
    label: tuple
    a0: float
    max_deviation: float
    rate_fit: float
    rate_theory: float
    r2_exponential: float
    sse_exponential: float
    sse_power: float

    @property
    def rate_error(self) -> float:
        return abs(self.rate_fit - self.rate_theory) / self.rate_theory


def _linear_fit(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    sse = float(res @ res)
    sst = float(((y - y.mean()) ** 2).sum())
    return coef, sse, 1.0 - sse / sst if sst > 0 else 1.0


def mode_decay_error(traj: TorusTrajectory, m: float | None = None, rho_bar: float | None = None,
                     modes: Iterable | None = None, window: float = 1e-3) -> list[ModeDecay]:
    """Per-mode deviation from a_j(0) exp(-m rho_bar^(m-1) lambda_j t) and fitted decay rates.

    Rates are fitted to log|a_j| over the samples with |a_j| >= window |a_j(0)|.
    A power law |a_j| ~ (t + t_1)^(-p) is fitted on the same samples for contrast.
    """
    m = traj.m if m is None else m
    rho_bar = traj.start.rho_bar if rho_bar is None else rho_bar
    basis = traj.start.basis
    modes = list(modes) if modes is not None else traj.start.active_modes()
    t = traj.times
    out = []
    for label in modes:
        ix = basis.mode_index(*_labels(basis.D, label))
        a = traj.coeffs[(slice(None),) + ix]
        gamma = m * rho_bar ** (m - 1.0) * basis.eigenvalues[ix]
        lin = a[0] * np.exp(-gamma * t)
        dev = float(np.abs(a - lin).max())
        if a[0] == 0:
            out.append(ModeDecay(label, 0.0, dev, math.nan, gamma, math.nan, math.nan, math.nan))
            continue
        keep = np.abs(a) >= window * abs(a[0])
        # only the leading stretch before the first drop below the window
        stop = np.argmin(keep) if not keep.all() else len(keep)
        tt, aa = t[:stop], np.abs(a[:stop])
        coef, sse_e, r2 = _linear_fit(tt, np.log(aa))
        t1 = tt[1] if len(tt) > 1 else 1.0
        _, sse_p, _ = _linear_fit(np.log(tt + t1), np.log(aa))
        out.append(ModeDecay(label, float(a[0]), dev, float(-coef[0]), float(gamma), r2, sse_e, sse_p))
    return out


# ---------------------------------------------------------------------------
# triad coupling coefficients  c_jkl = mean over the torus of phi_j phi_k phi_l

def _axis_exponentials(label):
    """Basis function on one axis as {integer frequency: complex coefficient}."""
    kind, k = label
    if k == 0:
        return {0: 1.0 + 0j}
    s = math.sqrt(2.0)
    if kind == "c":
        return {k: s / 2, -k: s / 2}
    return {k: s / 2j, -k: -s / 2j}


def _axis_coupling(l1, l2, l3) -> float:
    total = 0j
    for (f1, c1), (f2, c2), (f3, c3) in itertools.product(*(_axis_exponentials(l).items() for l in (l1, l2, l3))):
        if f1 + f2 + f3 == 0:
            total += c1 * c2 * c3
    return float(total.real)


def coupling_coefficients(j, k, l, D: int = 1) -> float:
    """Exact triple-product mean of continuum basis functions (sqrt2 cos / sqrt2 sin, constant 1).

    Modes are given by per-axis labels, e.g. ``('c', 2)`` in 1D or
    ``(('c', 1), ('s', 3))`` in 2D. Tensor-product modes factorise over axes.
    """
    js, ks, ls = (_labels(D, x) for x in (j, k, l))
    out = 1.0
    for a in range(D):
        out *= _axis_coupling(js[a], ks[a], ls[a])
    return out


def coupling_quadrature(j, k, l, D: int = 1, n: int = 10_000) -> float:
    """Same coefficient by the periodic trapezoid rule on n points per axis."""
    x = np.arange(n) / n
    out = 1.0
    for lab in zip(*(_labels(D, v) for v in (j, k, l))):
        vals = []
        for kind, kk in lab:
            if kk == 0:
                vals.append(np.ones(n))
            else:
                arg = 2 * np.pi * kk * x
                vals.append(math.sqrt(2.0) * (np.cos(arg) if kind == "c" else np.sin(arg)))
        out *= float(np.mean(vals[0] * vals[1] * vals[2]))
    return out


def quadratic_prediction(f: TorusField, m: float, t, targets: Sequence | None = None, rho_bar: float | None = None):
    """First-order-in-eps prediction of mode amplitudes.

    a_j(t) = e^(-g_j t) a_j(0) - eps B_j sum_{k,l} c_jkl a_k(0) a_l(0) int_0^t e^(-g_j (t-s)) e^(-(g_k+g_l) s) ds
    with g_j = m rho_bar^(m-1) lambda_j and B_j = m (m-1)/2 rho_bar^(m-1) lambda_j. The seeded
    amplitudes inside the integral follow their linear decay. Returns {label: array over t}.
    """
    rho_bar = f.rho_bar if rho_bar is None else rho_bar
    basis = f.basis
    t = np.atleast_1d(np.asarray(t, float))
    active = f.active_modes()
    if targets is None:
        targets = list(active)
        # triad closure: all sum and difference modes of seeded pairs
        for a, b in itertools.product(active, repeat=2):
            la, lb = _labels(basis.D, a), _labels(basis.D, b)
            per_axis = []
            for x, y in zip(la, lb):
                per_axis.append({("c", abs(x[1] + y[1])), ("s", abs(x[1] + y[1])),
                                 ("c", abs(x[1] - y[1])), ("s", abs(x[1] - y[1]))})
            for combo in itertools.product(*per_axis):
                if all(k <= basis.N // 2 and not (kind == "s" and (k == 0 or 2 * k == basis.N)) for kind, k in combo):
                    lab = combo[0] if basis.D == 1 else combo
                    if lab not in targets and any(kk for _, kk in combo):
                        targets.append(lab)
    lam = basis.eigenvalues
    pref = rho_bar ** (m - 1.0)
    a0 = {a: f.coeffs[basis.mode_index(*_labels(basis.D, a))] for a in active}
    g = {a: m * pref * lam[basis.mode_index(*_labels(basis.D, a))] for a in active}
    out = {}
    for j in targets:
        ij = basis.mode_index(*_labels(basis.D, j))
        gj = m * pref * lam[ij]
        Bj = 0.5 * m * (m - 1.0) * pref * lam[ij]
        val = f.coeffs[ij] * np.exp(-gj * t)
        if Bj != 0 and f.eps != 0:
            for k, l in itertools.product(active, repeat=2):
                c = coupling_coefficients(j, k, l, basis.D)
                if c == 0:
                    continue
                s = g[k] + g[l]
                d = gj - s
                if abs(d) * max(t.max(), 1e-300) < 1e-8:
                    duh = t * np.exp(-gj * t)
                else:
                    duh = (np.exp(-s * t) - np.exp(-gj * t)) / d
                val = val - f.eps * Bj * c * a0[k] * a0[l] * duh
        out[j] = val
    return out


def triad_report(k=("c", 1), l=("c", 2), m: float = 2.0, eps_values=(1e-3, 5e-4, 2.5e-4), N: int = 64,
                 L: float = 2 * np.pi, T: float = 0.5, dt: float = 1e-3) -> ExperimentReport:
    """Ratio test: residual between nonlinear run and quadratic prediction shrinks like eps^2."""
    rep = ExperimentReport("torus-triad", inputs={"k": k, "l": l, "m": m, "eps": list(eps_values), "N": N})
    res = []
    for eps in eps_values:
        f = TorusField.from_modes(N, {k: 1.0, l: 1.0}, eps=eps, L=L)
        traj = torus_pme_evolve(f, m, T, dt)
        pred = quadratic_prediction(f, m, traj.times)
        worst = 0.0
        for lab, p in pred.items():
            worst = max(worst, float(np.abs(traj.mode(lab) - p).max()))
        res.append(worst)
    slope = np.polyfit(np.log(eps_values), np.log(res), 1)[0]
    rep.quantities.update({"residuals": res, "slope": float(slope)})
    rep.check("second_order", "prediction residual scales like eps^2", slope, 2.0, "==", tol=0.2)
    return rep.finish()
