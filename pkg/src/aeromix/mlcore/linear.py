import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..exceptions import InsufficientDataError, ValidationError

RIDGE = 1e-8


class LinearRegression(RegressorMixin, BaseEstimator):
    """Ordinary least squares with an intercept, via the normal equations.

    Columns are centred and scaled to unit norm first.  When the scaled
    normal matrix is numerically rank deficient, ``ridge`` is added to its
    diagonal, which approaches the minimum-norm least-squares solution.
    """

    def __init__(self, ridge=RIDGE):
        self.ridge = ridge

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        n, p = X.shape
        if n < p + 1:
            raise InsufficientDataError(f"linear fit needs at least {p + 1} rows, got {n}")
        x_mean = X.mean(axis=0)
        y_mean = float(y.mean())
        Z = X - x_mean
        scale = np.sqrt(np.einsum("ij,ij->j", Z, Z))
        scale[scale == 0] = 1.0
        Z /= scale
        gram = Z.T @ Z
        rhs = Z.T @ (y - y_mean)
        eig = np.linalg.eigvalsh(gram) if p else np.zeros(0)
        self.regularized_ = bool(p) and not eig[0] > 1e-10 * max(eig[-1], 0.0)
        if self.regularized_:
            gram[np.diag_indices(p)] += self.ridge
        beta = np.linalg.solve(gram, rhs) if p else np.zeros(0)
        self.coef_ = beta / scale
        self.intercept_ = y_mean - float(x_mean @ self.coef_)
        self.n_features_in_ = p
        return self

    def predict(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"X has {X.shape[1]} features, model was trained on {self.n_features_in_}")
        return X @ self.coef_ + self.intercept_


def fit_linear(X, y):
    return LinearRegression().fit(X, y)
