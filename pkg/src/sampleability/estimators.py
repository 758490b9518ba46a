"""scikit-learn style wrappers around projection and smoothing on 1D samples.

Both estimators histogram the data on a uniform grid, run the grid-level
routine and keep the result as fitted attributes. ``transform`` pushes new
samples towards the fitted sampleable measure.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted

from .grid import GridMeasure, GridSpec, ball_mask
from .heat import gaussian_convolve, sampleability_threshold
from .interp import _sample
from .projection import SampleableSpec, project_sampleable
from .transport import MonotoneMap1D, w2_1d

__all__ = ["SampleableProjection", "SmoothingThreshold"]


def _histogram(X, n_cells: int, lo: float, hi: float) -> GridMeasure:
    X = check_array(X, ensure_2d=True)
    if X.shape[1] != 1:
        raise ValueError(f"only 1D samples are supported, got {X.shape[1]} features")
    spec = GridSpec.make(1, lo, hi, n_cells)
    counts, _ = np.histogram(X[:, 0], bins=spec.edges(0))
    if counts.sum() == 0:
        raise ValueError("no sample falls inside the grid")
    return GridMeasure(spec, counts.astype(float))


class SampleableProjection(TransformerMixin, BaseEstimator):
    """W2 projection of the empirical histogram onto the ratio-C class on [center - R, center + R].

    Fitted attributes: ``measure_`` (histogram), ``nu_`` (projection), ``cost_``
    (D_C), ``gap_`` (Frank-Wolfe certificate) and ``map_`` (monotone transport
    map from ``measure_`` to ``nu_``).
    """

    def __init__(self, C: float = 2.0, R: float = 1.0, center: float = 0.0, n_cells: int = 100,
                 margin: float = 0.0, tol: float | None = None):
        self.C = C
        self.R = R
        self.center = center
        self.n_cells = n_cells
        self.margin = margin
        self.tol = tol

    def fit(self, X, y=None):
        half = self.R + self.margin
        self.measure_ = _histogram(X, self.n_cells, self.center - half, self.center + half)
        res = project_sampleable(self.measure_, SampleableSpec(self.C, self.R, (self.center,)), tol=self.tol)
        self.nu_ = res.nu
        self.cost_ = res.cost
        self.gap_ = res.gap
        self.converged_ = res.converged
        self.map_ = MonotoneMap1D(self.measure_, self.nu_)
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "nu_")
        X = check_array(X)
        return self.map_(X[:, 0])[:, None]

    def sample(self, n_samples: int = 1, random_state=None):
        check_is_fitted(self, "nu_")
        return _sample(self.nu_, n_samples, check_random_state(random_state))

    def score(self, X, y=None):
        """Negative W2 between the histogram of X and the fitted projection."""
        check_is_fitted(self, "nu_")
        mu = _histogram(X, self.n_cells, *self.measure_.spec.lo, *self.measure_.spec.hi)
        return -w2_1d(mu, self.nu_)


class SmoothingThreshold(TransformerMixin, BaseEstimator):
    """Smallest Gaussian variance that brings the histogram's density ratio on S below C.

    S is the interval [center - R, center + R]; the grid is padded by ``pad``
    standard deviations of the geometric bound. Fitted attributes:
    ``beta_`` (threshold), ``bound_`` (M / (2 log C)), ``smoothed_`` (the
    smoothed grid measure) and ``cost_bound_`` (beta, the W2^2 budget in 1D).
    """

    def __init__(self, C: float = 2.0, R: float = 1.0, center: float = 0.0, n_cells: int = 200, pad: float = 0.5):
        self.C = C
        self.R = R
        self.center = center
        self.n_cells = n_cells
        self.pad = pad

    def fit(self, X, y=None):
        half = self.R * (1.0 + self.pad)
        self.measure_ = _histogram(X, self.n_cells, self.center - half, self.center + half)
        S = ball_mask(self.measure_.spec, self.R, (self.center,))
        rep = sampleability_threshold(self.measure_, S, self.C)
        self.beta_ = rep.beta_star
        self.bound_ = rep.bound
        self.cost_bound_ = rep.beta_star
        self.smoothed_ = gaussian_convolve(self.measure_, self.beta_) if self.beta_ > 0 else self.measure_
        self.n_features_in_ = 1
        return self

    def transform(self, X, random_state=None):
        """Add N(0, beta_) noise: the sample-level version of the smoothing."""
        check_is_fitted(self, "beta_")
        X = check_array(X)
        rng = check_random_state(random_state)
        return X + math.sqrt(self.beta_) * rng.standard_normal(X.shape)
