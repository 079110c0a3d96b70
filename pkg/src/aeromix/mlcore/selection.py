"""Train/test splitting and K-fold hyperparameter search."""

import csv
import itertools
import math
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from ..exceptions import InsufficientDataError, ValidationError
from .ensemble import GradientBoostingRegressor, RandomForestRegressor
from .linear import LinearRegression
from .metrics import compute_metrics

DEFAULT_GRID = {
    "n_estimators": [100, 300],
    "max_depth": [3, 5, 7],
    "learning_rate": [0.05, 0.1],
    "subsample": [0.8, 1.0],
    "min_samples_leaf": [3],
}

# search grids for the alternative estimators used in model comparison
RF_GRID = {
    "n_estimators": [100],
    "max_depth": [None],
    "min_samples_leaf": [1, 5],
    "max_features": ["sqrt"],
}
LINEAR_GRID = [{}]
DEFAULT_GRIDS = {"gbt": DEFAULT_GRID, "rf": RF_GRID, "linear": LINEAR_GRID}

ESTIMATORS = {
    "gbt": GradientBoostingRegressor,
    "rf": RandomForestRegressor,
    "linear": LinearRegression,
}


def make_estimator(kind, params=None, seed=0):
    try:
        cls = ESTIMATORS[kind]
    except KeyError:
        raise ValidationError(f"unknown estimator kind {kind!r}") from None
    params = dict(params or {})
    if "random_state" in cls().get_params():
        params.setdefault("random_state", seed)
    return cls(**params)


def split_indices(n, ratio=0.75, seed=0):
    """Sorted ``(train, test)`` index arrays of a seeded shuffled split."""
    if n < 4:
        raise InsufficientDataError(f"a train/test split needs at least 4 rows, got {n}")
    n_train = int(math.floor(ratio * n + 0.5))
    if not 0 < n_train < n:
        raise ValidationError(f"ratio {ratio} leaves an empty train or test set for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def train_test_split(matrix, ratio=0.75, seed=0):
    train, test = split_indices(len(matrix), ratio, seed)
    return matrix.take(train), matrix.take(test)


def expand_grid(param_grid):
    """Grid points in order: the last key varies fastest."""
    if isinstance(param_grid, dict):
        keys = list(param_grid)
        points = [dict(zip(keys, combo)) for combo in itertools.product(*(param_grid[k] for k in keys))]
    else:
        points = [dict(p) for p in param_grid]
    if not points:
        raise ValidationError("hyperparameter grid is empty")
    return points


def fold_assignment(n, k=5, seed=0):
    """Fold id of every row; folds differ in size by at most one."""
    if k < 2 or n < k:
        raise InsufficientDataError(f"{k}-fold cross-validation needs at least {k} rows, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    for fold, idx in enumerate(np.array_split(perm, k)):
        folds[idx] = fold
    return folds


def _fold_rmse(kind, params, seed, X, y, folds, fold):
    train, val = folds != fold, folds == fold
    model = make_estimator(kind, params, seed).fit(X[train], y[train])
    return compute_metrics(y[val], model.predict(X[val])).rmse


def kfold_cv(matrix, param_grid=None, k=5, seed=0, estimator="gbt", n_jobs=1):
    """Pick the grid point with the lowest mean validation RMSE.

    Returns ``(best_params, table)``; ``table`` has one dict per grid point
    with the parameters, ``fold_rmse`` (list) and ``mean_rmse``.  Ties go to
    the earlier grid point.
    """
    points = expand_grid(DEFAULT_GRID if param_grid is None else param_grid)
    folds = fold_assignment(len(matrix), k, seed)
    tasks = [(i, f) for i in range(len(points)) for f in range(k)]
    scores = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_fold_rmse)(estimator, points[i], seed, matrix.X, matrix.y, folds, f) for i, f in tasks
    )
    table = []
    for i, params in enumerate(points):
        fold_rmse = scores[i * k:(i + 1) * k]
        table.append({"params": params, "fold_rmse": fold_rmse, "mean_rmse": float(np.mean(fold_rmse))})
    best = min(range(len(points)), key=lambda i: (table[i]["mean_rmse"], i))
    for i, row in enumerate(table):
        row["selected"] = i == best
    return dict(points[best]), table


def write_cv_table(table, path):
    names = list(table[0]["params"])
    k = len(table[0]["fold_rmse"])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names + [f"fold{i + 1}_rmse" for i in range(k)] + ["mean_rmse", "selected"])
        for row in table:
            writer.writerow(
                [row["params"][n] for n in names]
                + [repr(v) for v in row["fold_rmse"]]
                + [repr(row["mean_rmse"]), int(row["selected"])]
            )
