"""Real trigonometric basis on the flat torus [0, L)^D sampled on a uniform grid.

Basis functions are normalised against the uniform probability measure, so
the constant mode is 1 and the coefficient of the constant mode is the mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = ["TorusBasis"]


@dataclass(frozen=True)
class TorusBasis:
    N: int  # grid points per axis
    L: float = 1.0
    D: int = 1

    def __post_init__(self):
        if self.D not in (1, 2):
            raise ValueError("D must be 1 or 2")
        if self.N < 2:
            raise ValueError("need N >= 2")

    @cached_property
    def axis_modes(self) -> list[tuple[str, int]]:
        """Per-axis labels ('c', k) / ('s', k) in the order 1, c1, s1, c2, s2, ..."""
        modes = [("c", 0)]
        for k in range(1, self.N // 2 + 1):
            modes.append(("c", k))
            if 2 * k < self.N:
                modes.append(("s", k))
        return modes

    @cached_property
    def x(self) -> np.ndarray:
        return np.arange(self.N) * self.L / self.N

    @cached_property
    def axis_matrix(self) -> np.ndarray:
        """Rows are basis functions evaluated at the grid points."""
        rows = []
        for kind, k in self.axis_modes:
            arg = 2 * np.pi * k * self.x / self.L
            if k == 0:
                rows.append(np.ones(self.N))
            elif 2 * k == self.N:
                rows.append(np.cos(arg))
            else:
                rows.append(np.sqrt(2.0) * (np.cos(arg) if kind == "c" else np.sin(arg)))
        return np.array(rows)

    @cached_property
    def axis_freq(self) -> np.ndarray:
        return np.array([k for _, k in self.axis_modes], dtype=float)

    @cached_property
    def axis_sup(self) -> np.ndarray:
        return np.abs(self.axis_matrix).max(axis=1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.D

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues of -Laplacian for each mode, array of shape ``self.shape``."""
        k2 = (2 * np.pi * self.axis_freq / self.L) ** 2
        if self.D == 1:
            return k2
        return k2[:, None] + k2[None, :]

    @cached_property
    def sup_norms(self) -> np.ndarray:
        s = self.axis_sup
        return s if self.D == 1 else s[:, None] * s[None, :]

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.x] * self.D), indexing="ij"))

    def analyze(self, f: np.ndarray) -> np.ndarray:
        """Mode coefficients of grid values ``f``."""
        B = self.axis_matrix
        f = np.asarray(f, float)
        if self.D == 1:
            return B @ f / self.N
        return B @ f @ B.T / self.N ** 2

    def synthesize(self, a: np.ndarray) -> np.ndarray:
        B = self.axis_matrix
        if self.D == 1:
            return B.T @ a
        return B.T @ a @ B

    def mode_index(self, *labels) -> tuple[int, ...]:
        """Array index of a mode given per-axis labels like ('c', 1)."""
        pos = {m: i for i, m in enumerate(self.axis_modes)}
        return tuple(pos[tuple(l)] for l in labels)
