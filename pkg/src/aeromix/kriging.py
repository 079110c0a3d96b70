"""Ordinary kriging of meteorological fields.

The variogram kind (spherical, exponential or gaussian) is chosen by
leave-one-out cross-validation.  Each kind is fitted to the empirical
semivariogram by least squares: for a fixed range the model is linear in
(nugget, partial sill), so the fit scans a geometric grid of ranges and
solves a non-negative least-squares problem at each.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import DegenerateInputError, InsufficientDataError, KrigingError, ValidationError

VARIOGRAM_KINDS = ("spherical", "exponential", "gaussian")
N_LAG_BINS = 12
N_RANGE_CANDIDATES = 40
_COND_LIMIT = 1e13


@dataclass(frozen=True)
class VariogramModel:
    """Isotropic variogram.  ``range`` is the practical range in meters."""

    kind: str
    nugget: float
    sill: float
    range: float

    def __post_init__(self):
        if self.kind not in VARIOGRAM_KINDS:
            raise ValidationError(f"unknown variogram kind {self.kind!r}")
        if not (self.nugget >= 0 and self.sill >= self.nugget and self.range > 0):
            raise ValidationError("variogram needs 0 <= nugget <= sill and range > 0")

    def semivariance(self, h):
        """Model semivariance at lag ``h``; equals the nugget at ``h = 0``."""
        h = np.asarray(h, dtype=np.float64)
        return self.nugget + (self.sill - self.nugget) * _shape(self.kind, h, self.range)


def _shape(kind, h, a):
    x = h / a
    if kind == "spherical":
        return np.where(x < 1.0, 1.5 * x - 0.5 * x**3, 1.0)
    if kind == "exponential":
        return 1.0 - np.exp(-3.0 * x)
    return 1.0 - np.exp(-3.0 * x**2)


def _check_samples(coords, values):
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    values = np.asarray(values, dtype=np.float64).ravel()
    if len(coords) != len(values):
        raise ValidationError("coords and values differ in length")
    if not np.all(np.isfinite(values)) or not np.all(np.isfinite(coords)):
        raise ValidationError("samples must be finite")
    return coords, values


def empirical_variogram(coords, values, n_bins=N_LAG_BINS):
    """Bin-averaged semivariance up to half the largest pairwise distance.

    Returns ``(lag_centers, semivariance, counts)`` for non-empty bins.
    """
    coords, values = _check_samples(coords, values)
    d = pdist(coords)
    g = 0.5 * pdist(values[:, None], "sqeuclidean")
    cutoff = d.max() / 2
    if cutoff <= 0:
        raise DegenerateInputError("all samples are co-located")
    edges = np.linspace(0.0, cutoff, n_bins + 1)
    keep = (d > 0) & (d <= cutoff)
    idx = np.minimum(np.searchsorted(edges, d[keep], side="right") - 1, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    sums = np.bincount(idx, weights=g[keep], minlength=n_bins)
    lag_sums = np.bincount(idx, weights=d[keep], minlength=n_bins)
    nonempty = counts > 0
    return lag_sums[nonempty] / counts[nonempty], sums[nonempty] / counts[nonempty], counts[nonempty]


def _nnls2(c1, c2, g):
    """Non-negative least squares with two columns, for a batch of second columns.

    ``c1`` is ``(m,)``, ``c2`` is ``(k, m)``.  The optimum is the unconstrained
    solution when that is feasible, otherwise the best one-column fit.
    Returns ``(x1, x2, sse)`` arrays of length ``k``.
    """
    a11 = c1 @ c1
    a12 = c2 @ c1
    a22 = np.einsum("km,km->k", c2, c2)
    b1 = c1 @ g
    b2 = c2 @ g
    det = a11 * a22 - a12**2
    with np.errstate(divide="ignore", invalid="ignore"):
        x1 = np.where(det > 0, (a22 * b1 - a12 * b2) / det, -1.0)
        x2 = np.where(det > 0, (a11 * b2 - a12 * b1) / det, -1.0)
        only1 = max(b1 / a11, 0.0)
        only2 = np.where(a22 > 0, np.maximum(b2 / a22, 0.0), 0.0)
    options = [
        np.where((x1 >= 0) & (x2 >= 0), x1, np.nan),
        np.full(len(c2), only1),
        np.zeros(len(c2)),
    ]
    options2 = [np.where((x1 >= 0) & (x2 >= 0), x2, np.nan), np.zeros(len(c2)), only2]
    sse = []
    for u, v in zip(options, options2):
        r = g[None, :] - u[:, None] * c1[None, :] - v[:, None] * c2
        sse.append(np.where(np.isnan(u), np.inf, np.einsum("km,km->k", r, r)))
    pick = np.argmin(np.stack(sse), axis=0)
    idx = np.arange(len(c2))
    return np.stack(options)[pick, idx], np.stack(options2)[pick, idx], np.stack(sse)[pick, idx]


def _fit_kind(kind, lags, gamma, candidates):
    shapes = np.stack([_shape(kind, lags, a) for a in candidates])
    nugget, psill, sse = _nnls2(np.ones_like(lags), shapes, gamma)
    i = int(np.argmin(sse))
    return VariogramModel(kind, float(nugget[i]), float(nugget[i] + psill[i]), float(candidates[i]))


def _semivariance_matrix(model, d):
    # gamma(0) = 0 at coincident points: the nugget is the jump at 0+.
    # Divided by the sill so the bordered system is well scaled; the weights
    # do not depend on that factor.
    scale = model.sill if model.sill > 0 else 1.0
    return np.where(d > 0, model.semivariance(d), 0.0) / scale


def _bordered(coords, model):
    n = len(coords)
    k = np.zeros((n + 1, n + 1))
    k[:n, :n] = _semivariance_matrix(model, cdist(coords, coords))
    k[:n, n] = 1.0
    k[n, :n] = 1.0
    return k


def _inverse(k):
    """Inverse of ``k`` or ``None`` when its 1-norm condition number is too large."""
    try:
        kinv = np.linalg.inv(k)
    except np.linalg.LinAlgError:
        return None
    cond = np.abs(k).sum(axis=0).max() * np.abs(kinv).sum(axis=0).max()
    return kinv if np.isfinite(cond) and cond < _COND_LIMIT else None


def kriging_system(coords, model):
    """Ordinary-kriging matrix ``[[G / sill, 1], [1^T, 0]]`` and its inverse.

    The diagonal is jittered by ``1e-10`` (``1e-10 * sill`` before scaling)
    when the system is ill conditioned.
    """
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    k = _bordered(coords, model)
    kinv = _inverse(k)
    if kinv is None:
        n = len(coords)
        k[np.arange(n), np.arange(n)] += 1e-10
        kinv = _inverse(k)
        if kinv is None:
            raise KrigingError("kriging system is singular even after jitter")
    return k, kinv


def kriging_weights(coords, model, targets):
    """Weights ``(n_targets, n_samples)``; each row sums to one."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    n = len(coords)
    if n == 0:
        raise InsufficientDataError("kriging needs at least one sample")
    k, _ = kriging_system(coords, model)
    # Solve for the departure from equal weights.  A constant right-hand
    # side only moves the Lagrange multiplier, so it is dropped; equidistant
    # targets then get exactly equal weights.
    r = _semivariance_matrix(model, cdist(coords, targets)) - k[:n, :n].mean(axis=1)[:, None]
    rhs = np.zeros((n + 1, len(targets)))
    rhs[:n] = r - r.mean(axis=0)
    try:
        sol = np.linalg.solve(k, rhs)
    except np.linalg.LinAlgError as exc:
        raise KrigingError(f"kriging solve failed: {exc}") from None
    return (1.0 / n + sol[:n]).T


def krige(coords, values, model, targets):
    """Ordinary-kriging estimates at ``targets`` (``(m, 2)`` array or one point)."""
    coords, values = _check_samples(coords, values)
    return kriging_weights(coords, model, targets) @ values


def loo_rmse(coords, values, model):
    """Leave-one-out kriging RMSE via the closed form on the inverse system."""
    coords, values = _check_samples(coords, values)
    n = len(values)
    _, kinv = kriging_system(coords, model)
    b = np.concatenate([values, [0.0]])
    errors = (kinv @ b)[:n] / np.diag(kinv)[:n]
    return float(np.sqrt(np.mean(errors**2)))


def fit_variogram(coords, values, kinds=VARIOGRAM_KINDS):
    """Fit every kind in ``kinds`` and keep the best by leave-one-out RMSE."""
    coords, values = _check_samples(coords, values)
    if len(values) < 5:
        raise InsufficientDataError(f"variogram fitting needs at least 5 samples, got {len(values)}")
    distinct = np.unique(coords, axis=0)
    if len(distinct) == 1:
        raise DegenerateInputError("all samples are co-located")
    if len(distinct) < 3:
        raise InsufficientDataError("variogram fitting needs at least 3 distinct locations")
    kinds = [k for k in VARIOGRAM_KINDS if k in set(kinds)]
    if not kinds:
        raise ValidationError("no variogram kinds requested")
    lags, gamma, _ = empirical_variogram(coords, values)
    cutoff = pdist(coords).max() / 2
    if np.ptp(values) == 0:
        return VariogramModel(kinds[0], 0.0, 0.0, cutoff)
    candidates = np.geomspace(cutoff / N_LAG_BINS / 2, 4 * cutoff, N_RANGE_CANDIDATES)
    best = None
    for kind in kinds:
        model = _fit_kind(kind, lags, gamma, candidates)
        try:
            score = loo_rmse(coords, values, model)
        except KrigingError:
            # e.g. a gaussian model without nugget on a dense lattice
            continue
        if best is None or score < best[0]:
            best = (score, model)
    if best is None:
        raise KrigingError("every variogram kind gives a singular kriging system")
    return best[1]


class OrdinaryKriging(RegressorMixin, BaseEstimator):
    """Ordinary kriging as an estimator over 2-D coordinates.

    With ``variogram=None`` the model is selected by :func:`fit_variogram`
    from ``kinds``.
    """

    def __init__(self, variogram=None, kinds=VARIOGRAM_KINDS):
        self.variogram = variogram
        self.kinds = kinds

    def fit(self, X, y):
        X = check_array(X)
        if X.shape[1] != 2:
            raise ValidationError("kriging coordinates must have two columns")
        self.coords_, self.values_ = _check_samples(X, y)
        self.variogram_ = self.variogram if self.variogram is not None else fit_variogram(X, y, self.kinds)
        self.n_features_in_ = 2
        return self

    def weights(self, X):
        check_is_fitted(self)
        return kriging_weights(self.coords_, self.variogram_, check_array(X))

    def predict(self, X):
        return self.weights(X) @ self.values_
