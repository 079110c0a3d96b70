import math
from numbers import Integral, Real

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..exceptions import ValidationError
from .tree import build_tree


def _require(condition, message):
    if not condition:
        raise ValidationError(f"invalid hyperparameter: {message}")


def _check_predict_input(estimator, X):
    check_is_fitted(estimator)
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != estimator.n_features_in_:
        raise ValidationError(f"X has {X.shape[1]} features, model was trained on {estimator.n_features_in_}")
    return X


class GradientBoostingRegressor(RegressorMixin, BaseEstimator):
    """Gradient-boosted least-squares trees with shrinkage and row subsampling.

    Starts from the training-target mean and adds ``learning_rate`` times a
    depth-limited tree fitted to the current residuals, ``n_estimators``
    times.  Each tree sees a fresh row subsample (without replacement) of
    size ``round(subsample * n)`` drawn from ``random_state``.

    Attributes
    ----------
    base_score_ : float
    trees_ : list of RegressionTree
    train_sse_ : ndarray
        Training SSE after each boosting round (round 0 is the base score).
    """

    def __init__(self, n_estimators=100, learning_rate=0.1, max_depth=3, min_samples_leaf=1,
                 subsample=1.0, random_state=0):
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.subsample = subsample
        self.random_state = random_state

    def _check_params(self):
        _require(isinstance(self.n_estimators, Integral) and self.n_estimators >= 0, "n_estimators must be an integer >= 0")
        _require(isinstance(self.learning_rate, Real) and 0 <= self.learning_rate <= 1, "learning_rate must lie in [0, 1]")
        _require(isinstance(self.max_depth, Integral) and self.max_depth >= 0, "max_depth must be an integer >= 0")
        _require(isinstance(self.min_samples_leaf, Integral) and self.min_samples_leaf >= 1, "min_samples_leaf must be >= 1")
        _require(isinstance(self.subsample, Real) and 0 < self.subsample <= 1, "subsample must lie in (0, 1]")

    def fit(self, X, y):
        self._check_params()
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        n = len(y)
        rng = np.random.default_rng(self.random_state)
        self.n_features_in_ = X.shape[1]
        self.base_score_ = float(np.mean(y))
        pred = np.full(n, self.base_score_)
        residual = y - pred
        sse = [float(residual @ residual)]
        all_rows = np.arange(n)
        n_sub = max(1, int(math.floor(self.subsample * n + 0.5)))
        trees = []
        for _ in range(self.n_estimators):
            if n_sub < n:
                rows = np.sort(rng.choice(n, size=n_sub, replace=False))
            else:
                rows = all_rows
            tree = build_tree(X, residual, rows, self.max_depth, self.min_samples_leaf)
            pred += self.learning_rate * tree.predict(X)
            residual = y - pred
            sse.append(float(residual @ residual))
            trees.append(tree)
        self.trees_ = trees
        self.train_sse_ = np.array(sse)
        return self

    def predict(self, X):
        X = _check_predict_input(self, X)
        pred = np.full(len(X), self.base_score_)
        for tree in self.trees_:
            pred += self.learning_rate * tree.predict(X)
        return pred


def _max_features(value, n_features):
    if value is None:
        return n_features
    if value == "sqrt":
        return max(1, math.ceil(math.sqrt(n_features)))
    if isinstance(value, Integral):
        return min(int(value), n_features)
    if isinstance(value, Real):
        return max(1, int(math.ceil(value * n_features)))
    raise ValidationError(f"invalid hyperparameter: max_features={value!r}")


def _fit_forest_tree(X, y, seed, bootstrap, max_depth, min_samples_leaf, max_features):
    rng = np.random.default_rng(seed)
    n = len(y)
    rows = np.sort(rng.integers(0, n, size=n)) if bootstrap else np.arange(n)
    return build_tree(X, y, rows, max_depth, min_samples_leaf, max_features, rng)


class RandomForestRegressor(RegressorMixin, BaseEstimator):
    """Bagged regression trees with per-split random feature subsets.

    Tree ``i`` draws its bootstrap sample and feature subsets from the
    ``i``-th child of ``SeedSequence(random_state)``, so the fitted forest
    does not depend on ``n_jobs``.
    """

    def __init__(self, n_estimators=100, max_depth=None, min_samples_leaf=1, max_features="sqrt",
                 bootstrap=True, random_state=0, n_jobs=1):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        _require(isinstance(self.n_estimators, Integral) and self.n_estimators >= 1, "n_estimators must be >= 1")
        _require(self.max_depth is None or (isinstance(self.max_depth, Integral) and self.max_depth >= 0),
                 "max_depth must be None or an integer >= 0")
        _require(isinstance(self.min_samples_leaf, Integral) and self.min_samples_leaf >= 1, "min_samples_leaf must be >= 1")
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        k = _max_features(self.max_features, X.shape[1])
        seeds = np.random.SeedSequence(self.random_state).spawn(self.n_estimators)
        self.trees_ = Parallel(n_jobs=self.n_jobs, prefer="threads")(
            delayed(_fit_forest_tree)(X, y, s, self.bootstrap, self.max_depth, self.min_samples_leaf, k)
            for s in seeds
        )
        return self

    def predict(self, X):
        X = _check_predict_input(self, X)
        total = np.zeros(len(X))
        for tree in self.trees_:
            total += tree.predict(X)
        return total / len(self.trees_)


def fit_gbt(matrix, hyperparams=None, seed=0):
    params = dict(hyperparams or {})
    params.setdefault("random_state", seed)
    return GradientBoostingRegressor(**params).fit(matrix.X, matrix.y)


def fit_rf(matrix, hyperparams=None, seed=0):
    params = dict(hyperparams or {})
    params.setdefault("random_state", seed)
    return RandomForestRegressor(**params).fit(matrix.X, matrix.y)
