"""scikit-learn style wrappers around the numerical pipelines.

These give the fit/predict/transform surface and parameter introspection
(``get_params``/``set_params``/``clone``) expected by scikit-learn tooling.
Inputs are one-dimensional grids passed as a column ``X`` of shape (n, 1).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .clusters import power_law_fit
from .free_operator import DEFAULT_MARGIN
from .potential import split_by_level
from .thomas import FLAT_BAND_THRESHOLD, band_ac_indicator, thomas_decay_scan


def _column(X, name: str = "X") -> np.ndarray:
    X = check_array(X, ensure_2d=False, dtype=float, input_name=name)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"{name} must have a single feature column, got {X.shape[1]}")
        X = X[:, 0]
    return X


class PowerLawRegressor(RegressorMixin, BaseEstimator):
    """Least-squares fit of y = C x^s in log-log coordinates.

    Attributes: ``slope_``, ``constant_``, ``residual_``.
    """

    def fit(self, X, y):
        x = _column(X)
        y = check_array(y, ensure_2d=False, dtype=float, input_name="y")
        if x.shape != y.shape:
            raise ValueError("X and y must have the same length")
        if np.any(x <= 0) or np.any(y <= 0):
            raise ValueError("power-law fits need positive data")
        slope, intercept, res = power_law_fit(x, y)
        self.slope_, self.constant_, self.residual_ = slope, float(np.exp(intercept)), res
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "slope_")
        return self.constant_ * _column(X) ** self.slope_


class LevelSplitter(TransformerMixin, BaseEstimator):
    """Learns the smallest level t with ||V 1{|V| > t}||_p <= delta.

    ``fit`` takes samples of V (any shape, flattened) with quadrature weights;
    ``transform`` returns the bounded part V2 = V 1{|V| <= t}.
    """

    def __init__(self, p: float = 2.0, delta: float = 0.1):
        self.p = p
        self.delta = delta

    def fit(self, X, y=None, sample_weight=None):
        v = _column(X)
        w = np.ones_like(v) if sample_weight is None else check_array(sample_weight, ensure_2d=False, dtype=float)
        res = split_by_level(v, w, self.p, self.delta)
        self.level_, self.norm_large_ = res.level, res.norm_v1
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "level_")
        v = _column(X)
        return np.where(np.abs(v) > self.level_, 0.0, v)[:, None]

    def large_part(self, X):
        check_is_fitted(self, "level_")
        v = _column(X)
        return np.where(np.abs(v) > self.level_, v, 0.0)[:, None]


class ThomasDecayEstimator(RegressorMixin, BaseEstimator):
    """Fits ||(H(tau) - lam)^-1|| ~ C tau^s on a tau grid for a fixed model.

    ``predict`` returns the fitted power law; the measured norms are kept in
    ``norms_``.
    """

    def __init__(self, model=None, lam: complex = 0.0, xi_perp=None, lambda_max=None,
                 margin: float = DEFAULT_MARGIN, n_jobs=None):
        self.model = model
        self.lam = lam
        self.xi_perp = xi_perp
        self.lambda_max = lambda_max
        self.margin = margin
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        if self.model is None:
            raise ValueError("model is required")
        taus = _column(X)
        scan = thomas_decay_scan(self.model, taus, self.lam, self.xi_perp, self.lambda_max,
                                 self.margin, n_jobs=self.n_jobs)
        self.scan_ = scan
        self.norms_ = scan.norms
        self.slope_, self.residual_ = scan.slope, scan.residual
        live = np.isfinite(scan.norms)
        self.constant_ = float(np.exp(power_law_fit(np.abs(taus[live]), scan.norms[live])[1]))
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "slope_")
        return self.constant_ * np.abs(_column(X)) ** self.slope_


class BandStructureEstimator(TransformerMixin, BaseEstimator):
    """Band functions along theta*b1 + xi'.

    ``fit`` sweeps the grid and stores ``variation_`` and ``flat_bands_``;
    ``transform`` returns the (n, n_bands) band table for any theta grid.
    """

    def __init__(self, model=None, n_bands: int = 8, lambda_max: float = 400.0, xi_perp=None,
                 threshold: float = FLAT_BAND_THRESHOLD, n_jobs=None):
        self.model = model
        self.n_bands = n_bands
        self.lambda_max = lambda_max
        self.xi_perp = xi_perp
        self.threshold = threshold
        self.n_jobs = n_jobs

    def _indicator(self, thetas):
        if self.model is None:
            raise ValueError("model is required")
        return band_ac_indicator(self.model, self.n_bands, thetas, self.lambda_max, self.xi_perp,
                                 self.threshold, self.n_jobs)

    def fit(self, X, y=None):
        ind = self._indicator(_column(X))
        self.bands_ = ind.table.bands
        self.variation_ = ind.variation
        self.flat_bands_ = ind.flat_bands
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "bands_")
        return self._indicator(_column(X)).table.bands


__all__ = ["BandStructureEstimator", "LevelSplitter", "PowerLawRegressor", "ThomasDecayEstimator"]
