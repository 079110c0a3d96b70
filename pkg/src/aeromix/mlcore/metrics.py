import math
from dataclasses import dataclass

import numpy as np

from ..exceptions import ValidationError


@dataclass(frozen=True)
class Metrics:
    r2: float
    rmse: float
    mae: float
    n: int


def compute_metrics(y_true, y_pred):
    """R², RMSE and MAE; ``r2`` is NaN when ``y_true`` is constant."""
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if len(y_true) != len(y_pred):
        raise ValidationError(f"length mismatch: {len(y_true)} vs {len(y_pred)}")
    if len(y_true) == 0:
        raise ValidationError("metrics need at least one sample")
    err = y_true - y_pred
    sse = float(err @ err)
    dev = y_true - y_true.mean()
    sst = float(dev @ dev)
    r2 = 1.0 - sse / sst if sst > 0 else math.nan
    return Metrics(r2=r2, rmse=math.sqrt(sse / len(err)), mae=float(np.mean(np.abs(err))), n=len(err))
