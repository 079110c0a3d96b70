"""Regression models, model selection and accuracy metrics."""

from .ensemble import GradientBoostingRegressor, RandomForestRegressor, fit_gbt, fit_rf
from .linear import LinearRegression, fit_linear
from .matrix import TrainingMatrix, read_matrix, write_matrix
from .metrics import Metrics, compute_metrics
from .selection import DEFAULT_GRID, kfold_cv, make_estimator, train_test_split
from .serialize import dumps_model, load_model, loads_model, save_model


def predict(model, features):
    """Predictions of any fitted aeromix model for a 2-D feature array."""
    return model.predict(features)


__all__ = [
    "DEFAULT_GRID", "GradientBoostingRegressor", "LinearRegression", "Metrics", "RandomForestRegressor",
    "TrainingMatrix", "compute_metrics", "dumps_model", "fit_gbt", "fit_linear", "fit_rf", "kfold_cv",
    "load_model", "loads_model", "make_estimator", "predict", "read_matrix", "save_model",
    "train_test_split", "write_matrix",
]
