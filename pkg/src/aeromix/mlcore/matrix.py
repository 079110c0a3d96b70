import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..exceptions import TableFormatError, ValidationError


@dataclass(frozen=True, eq=False)
class TrainingMatrix:
    """Feature rows with their PM2.5 targets and ``(station_id, date)`` keys."""

    feature_names: tuple
    X: np.ndarray
    y: np.ndarray
    keys: list

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if X.ndim != 2 or X.shape[1] != len(self.feature_names):
            raise ValidationError(f"X has shape {X.shape}, expected {len(self.feature_names)} columns")
        if len(y) != len(X) or len(self.keys) != len(X):
            raise ValidationError("X, y and keys differ in length")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValidationError("training matrix contains non-finite entries")
        if np.any(y < 0):
            raise ValidationError("targets must be non-negative")
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "keys", list(self.keys))

    def __len__(self):
        return len(self.y)

    def take(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return TrainingMatrix(self.feature_names, self.X[indices], self.y[indices], [self.keys[i] for i in indices])

    def restrict(self, keys):
        """Rows whose key is in ``keys``, in this matrix's row order."""
        keys = set(keys)
        return self.take([i for i, k in enumerate(self.keys) if k in keys])

    def index(self):
        return {k: i for i, k in enumerate(self.keys)}


def write_matrix(matrix, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("station_id", "date") + matrix.feature_names + ("target_pm25",))
        for (station, date), row, target in zip(matrix.keys, matrix.X.tolist(), matrix.y.tolist()):
            writer.writerow([station, date.isoformat()] + [repr(v) for v in row] + [repr(target)])


def read_matrix(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["station_id", "date"] or header[-1] != "target_pm25":
            raise TableFormatError(f"{path}: not a training-matrix file")
        names = tuple(header[2:-1])
        keys, rows, targets = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            try:
                keys.append((rec[0], dt.date.fromisoformat(rec[1])))
                rows.append([float(v) for v in rec[2:-1]])
                targets.append(float(rec[-1]))
            except (ValueError, IndexError):
                raise TableFormatError(f"{path}:{lineno}: malformed row") from None
    return TrainingMatrix(names, np.array(rows).reshape(-1, len(names)), np.array(targets), keys)
