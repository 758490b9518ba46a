"""Densities on uniform 1D/2D grids, support masks and their geometry."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "GridSpec",
    "GridMeasure",
    "SupportMask",
    "DegenerateDensityError",
    "build_measure",
    "density_ratio",
    "moments",
    "segment_defect",
    "ball_mask",
    "annulus_mask",
    "crescent_mask",
    "interval_mask",
]

MASS_TOL = 1e-10


class DegenerateDensityError(ValueError):
    """Raised when a sampler has no mass on the grid."""


def _as_tuple(value, D, cast=float):
    if np.ndim(value) == 0:
        return (cast(value),) * D
    out = tuple(cast(v) for v in value)
    if len(out) != D:
        raise ValueError(f"expected {D} entries, got {len(out)}")
    return out


@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centred grid on a box in R^D, D in {1, 2}."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    n: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.lo) == len(self.hi) == len(self.n)):
            raise ValueError("lo, hi and n must have the same length")
        if self.D not in (1, 2):
            raise ValueError(f"only D=1 and D=2 are supported, got D={self.D}")
        for lo, hi, n in zip(self.lo, self.hi, self.n):
            if not lo < hi:
                raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
            if n < 2:
                raise ValueError(f"need at least 2 cells per axis, got {n}")

    @classmethod
    def make(cls, D: int, lo, hi, n) -> "GridSpec":
        return cls(_as_tuple(lo, D), _as_tuple(hi, D), _as_tuple(n, D, int))

    @property
    def D(self) -> int:
        return len(self.n)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.n)

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple((hi - lo) / n for lo, hi, n in zip(self.lo, self.hi, self.n))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.dx))

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    def centers(self, axis: int = 0) -> np.ndarray:
        lo, dx, n = self.lo[axis], self.dx[axis], self.n[axis]
        return lo + (np.arange(n) + 0.5) * dx

    def edges(self, axis: int = 0) -> np.ndarray:
        lo, dx, n = self.lo[axis], self.dx[axis], self.n[axis]
        return lo + np.arange(n + 1) * dx

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Cell-centre coordinate arrays, each of shape ``self.shape``."""
        return tuple(np.meshgrid(*(self.centers(a) for a in range(self.D)), indexing="ij"))

    def points(self) -> np.ndarray:
        """Cell centres as an (N, D) array in row-major order."""
        return np.stack([c.ravel() for c in self.mesh()], axis=1)

    def padded(self, cells) -> "GridSpec":
        """Grid extended by an integer number of cells on both sides of each axis."""
        cells = _as_tuple(cells, self.D, int)
        lo = tuple(l - k * d for l, k, d in zip(self.lo, cells, self.dx))
        hi = tuple(h + k * d for h, k, d in zip(self.hi, cells, self.dx))
        n = tuple(n + 2 * k for n, k in zip(self.n, cells))
        return GridSpec(lo, hi, n)

    def offset_in(self, other: "GridSpec") -> tuple[int, ...]:
        """Integer index offset of this grid's first cell inside an aligned grid ``other``."""
        if other.D != self.D or not np.allclose(other.dx, self.dx, rtol=1e-9):
            raise ValueError("grids are not aligned")
        off = []
        for a in range(self.D):
            k = (self.lo[a] - other.lo[a]) / self.dx[a]
            if abs(k - round(k)) > 1e-6:
                raise ValueError("grids are not aligned")
            off.append(int(round(k)))
        return tuple(off)

    def to_dict(self) -> dict:
        return {"D": self.D, "lo": list(self.lo), "hi": list(self.hi), "n": list(self.n)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls.make(int(d["D"]), d["lo"], d["hi"], d["n"])


class GridMeasure:
    """Probability density sampled one value per cell (piecewise constant)."""

    def __init__(self, spec: GridSpec, density, normalize: bool = True):
        density = np.array(density, dtype=float).reshape(spec.shape)
        if not np.all(np.isfinite(density)):
            raise ValueError("density has non-finite entries")
        if np.any(density < 0):
            raise ValueError("density has negative entries")
        mass = density.sum() * spec.cell_volume
        if mass <= 0:
            raise DegenerateDensityError("degenerate density")
        if normalize:
            density = density / mass
        elif abs(mass - 1.0) > MASS_TOL:
            raise ValueError(f"density has mass {mass}, expected 1")
        density.setflags(write=False)
        self.spec = spec
        self.density = density

    def __repr__(self):
        return f"GridMeasure(D={self.spec.D}, shape={self.spec.shape})"

    @property
    def masses(self) -> np.ndarray:
        return self.density * self.spec.cell_volume

    def mass(self) -> float:
        return float(self.masses.sum())

    def normalized(self) -> "GridMeasure":
        return GridMeasure(self.spec, self.density)

    def support(self, threshold: float = 0.0) -> "SupportMask":
        """Cells with density above ``threshold`` times the maximum (strictly positive cells by default)."""
        return SupportMask(self.spec, self.density > threshold * self.density.max())

    def embed(self, spec: GridSpec) -> "GridMeasure":
        """Zero-extend onto a larger aligned grid."""
        off = self.spec.offset_in(spec)
        out = np.zeros(spec.shape)
        out[tuple(slice(o, o + n) for o, n in zip(off, self.spec.n))] = self.density
        return GridMeasure(spec, out)

    # serialisation
    def to_csv(self, path) -> None:
        s = self.spec
        fields = [str(s.D)]
        for vals in (s.lo, s.hi, s.n):
            vals = [v.item() if hasattr(v, "item") else v for v in vals]
            fields.append(";".join(repr(v) for v in dict.fromkeys(vals)) if len(set(vals)) == 1
                          else ";".join(repr(v) for v in vals))
        with open(path, "w") as fh:
            fh.write("# spec: " + ",".join(fields) + "\n")
            for v in self.density.ravel():
                fh.write(f"{float(v)!r}\n")

    @classmethod
    def from_csv(cls, path) -> "GridMeasure":
        with open(path) as fh:
            header = fh.readline()
            if not header.startswith("# spec:"):
                raise ValueError("missing '# spec:' header")
            D, lo, hi, n = header[len("# spec:"):].strip().split(",")
            D = int(D)
            parse = lambda s, cast: [cast(v) for v in s.split(";")]
            spec = GridSpec.make(D, *(v if len(v) > 1 else v[0]
                                      for v in (parse(lo, float), parse(hi, float), parse(n, int))))
            density = np.loadtxt(fh, ndmin=1)
        return cls(spec, density)

    def to_json(self) -> str:
        return json.dumps({"spec": self.spec.to_dict(), "density": self.density.ravel().tolist()})

    @classmethod
    def from_json(cls, text: str) -> "GridMeasure":
        d = json.loads(text)
        return cls(GridSpec.from_dict(d["spec"]), d["density"])


class SupportMask:
    def __init__(self, spec: GridSpec, flags):
        flags = np.array(flags, dtype=bool).reshape(spec.shape)
        flags.setflags(write=False)
        self.spec = spec
        self.flags = flags

    def __repr__(self):
        return f"SupportMask(D={self.spec.D}, cells={self.count})"

    @property
    def count(self) -> int:
        return int(self.flags.sum())

    @property
    def volume(self) -> float:
        return self.count * self.spec.cell_volume

    def points(self) -> np.ndarray:
        return self.spec.points()[self.flags.ravel()]

    def diameter(self) -> float:
        """Largest distance between in-mask cell centres."""
        pts = self.boundary_points()
        if len(pts) < 2:
            return 0.0
        if self.spec.D == 1:
            return float(pts.max() - pts.min())
        best = 0.0
        for chunk in np.array_split(pts, max(1, len(pts) // 512)):
            d2 = ((chunk[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
            best = max(best, float(d2.max()))
        return float(np.sqrt(best))

    def boundary(self) -> np.ndarray:
        """In-mask cells with an out-of-mask (or off-grid) neighbour along some axis."""
        padded = np.pad(self.flags, 1, constant_values=False)
        inner = tuple(slice(1, -1) for _ in range(self.spec.D))
        interior = self.flags.copy()
        for a in range(self.spec.D):
            for shift in (-1, 1):
                interior &= np.roll(padded, shift, axis=a)[inner]
        return self.flags & ~interior

    def boundary_points(self) -> np.ndarray:
        return self.spec.points()[self.boundary().ravel()]

    def embed(self, spec: GridSpec) -> "SupportMask":
        off = self.spec.offset_in(spec)
        out = np.zeros(spec.shape, dtype=bool)
        out[tuple(slice(o, o + n) for o, n in zip(off, self.spec.n))] = self.flags
        return SupportMask(spec, out)

    def __and__(self, other: "SupportMask") -> "SupportMask":
        return SupportMask(self.spec, self.flags & other.flags)

    def __or__(self, other: "SupportMask") -> "SupportMask":
        return SupportMask(self.spec, self.flags | other.flags)


def build_measure(spec: GridSpec, sampler: Callable[..., np.ndarray]) -> GridMeasure:
    """Sample ``sampler(*coords)`` at cell centres and normalise to unit mass."""
    values = np.broadcast_to(np.asarray(sampler(*spec.mesh()), dtype=float), spec.shape)
    if np.any(values < 0):
        raise ValueError("sampler returned negative values")
    if not np.any(values > 0):
        raise DegenerateDensityError("degenerate density")
    return GridMeasure(spec, values)


def density_ratio(nu: GridMeasure, S: SupportMask, zero_threshold: float = 1e-14) -> float:
    """max/min of the density over the mask; ``inf`` when the minimum vanishes.

    A cell counts as vanishing when its density is below ``zero_threshold`` times
    the global maximum of ``nu``.
    """
    if S.count == 0:
        raise ValueError("empty mask")
    vals = nu.density[S.flags]
    lo, hi = vals.min(), vals.max()
    if lo <= zero_threshold * nu.density.max():
        return float("inf")
    return float(hi / lo)


def moments(nu: GridMeasure, continuum: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Midpoint-rule mean vector and covariance matrix.

    With ``continuum=True`` the density is read as piecewise constant, which adds
    the within-cell variance dx^2/12 on each axis.
    """
    pts = nu.spec.points()
    w = nu.masses.ravel()
    w = w / w.sum()
    mean = w @ pts
    c = pts - mean
    cov = (c * w[:, None]).T @ c
    if continuum:
        cov = cov + np.diag(np.asarray(nu.spec.dx) ** 2 / 12.0)
    return mean, cov


def segment_defect(K: SupportMask, n_lambda: int = 64, return_witness: bool = False):
    """Largest distance from a chord of the mask back to the mask.

    Chords are taken between boundary cell centres (a chord leaving the set can
    always be shortened to one with boundary endpoints) and sampled at
    ``n_lambda`` uniformly spaced interpolation weights. The witness is
    ``(x0, y0, lam0)`` with ``lam0*x0 + (1-lam0)*y0`` the farthest point.
    """
    if K.count == 0:
        raise ValueError("empty mask")
    tree = cKDTree(K.points())
    ends = K.boundary_points()
    lams = np.linspace(0.0, 1.0, n_lambda)
    best, witness = 0.0, (ends[0], ends[0], 0.0)
    for i in range(len(ends)):
        x = ends[i]
        y = ends[i:]
        z = lams[None, :, None] * x + (1 - lams[None, :, None]) * y[:, None, :]
        d, _ = tree.query(z.reshape(-1, K.spec.D))
        k = int(np.argmax(d))
        if d[k] > best:
            best = float(d[k])
            witness = (x.copy(), y[k // n_lambda].copy(), float(lams[k % n_lambda]))
    return (best, witness) if return_witness else best


def ball_mask(spec: GridSpec, R: float, center=None) -> SupportMask:
    """Cells whose centres lie in the closed ball of radius R."""
    center = np.zeros(spec.D) if center is None else np.asarray(center, float)
    r2 = sum((c - x0) ** 2 for c, x0 in zip(spec.mesh(), center))
    return SupportMask(spec, r2 <= R * R * (1 + 1e-12))


def interval_mask(spec: GridSpec, intervals: Sequence[tuple[float, float]]) -> SupportMask:
    """1D mask of cells whose centres fall in any of the closed intervals."""
    x = spec.centers(0)
    flags = np.zeros(spec.n[0], dtype=bool)
    for a, b in intervals:
        flags |= (x >= a) & (x <= b)
    return SupportMask(spec, flags)


def annulus_mask(spec: GridSpec, r_in: float, r_out: float) -> SupportMask:
    r2 = sum(c ** 2 for c in spec.mesh())
    return SupportMask(spec, (r2 >= r_in ** 2) & (r2 <= r_out ** 2))


def crescent_mask(spec: GridSpec, radius: float = 1.0, cut_radius: float = 0.75,
                  offset: float = 0.5) -> SupportMask:
    """Disk of ``radius`` minus a disk of ``cut_radius`` shifted by ``offset`` along x."""
    if spec.D != 2:
        raise ValueError("crescent is a 2D shape")
    x, y = spec.mesh()
    outer = x ** 2 + y ** 2 <= radius ** 2
    inner = (x - offset) ** 2 + y ** 2 < cut_radius ** 2
    return SupportMask(spec, outer & ~inner)
