"""From raw grids and tables to model-ready samples.

Window extraction with the standard-deviation reliability filter, Aqua/Terra
gap filling by linear regression, daily averaging, the humidity correction of
ground PM2.5 and boundary-layer normalization of AOD.  Kriging of the
meteorological fields lives in :mod:`aeromix.kriging`.
"""

import datetime as dt
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    DegenerateInputError,
    InsufficientDataError,
    PipelineError,
    ValidationError,
)
from .gridio import StationRecord

STD_THRESHOLD = 0.02
RH_MAX = 99.0
BLH_MIN = 50.0
MIN_PAIRS = 30

FEATURE_NAMES = (
    "AOD", "East", "North", "DPT", "T", "Blh", "SP", "Lai_hv", "Lai_lv",
    "WS", "WD", "Cdir", "Uvb", "RH", "DOY",
)
# MetRecord attribute feeding each meteorological feature
_MET_FEATURES = {
    "DPT": "dpt", "T": "t", "Blh": "blh", "SP": "sp", "Lai_hv": "lai_hv",
    "Lai_lv": "lai_lv", "WS": "ws", "WD": "wd", "Cdir": "cdir", "Uvb": "uvb", "RH": "rh",
}

# Fixed summation order over the 3x3 neighbourhood.
_OFFSETS = tuple((dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1))


@dataclass(frozen=True)
class WindowSample:
    stream: str
    date: dt.date
    location: tuple
    mean_aod: float
    std_aod: float
    weight: float
    n_valid: int
    valid: bool


def window_statistics(values, valid, qa, std_threshold=STD_THRESHOLD):
    """3x3 window statistics centred on every cell of a grid.

    Returns a dict of ``(nrows, ncols)`` arrays: ``mean``, ``std``
    (population), ``n_valid``, ``weight`` (share of QA-3 pixels, always over
    nine) and ``valid`` (at least one valid pixel and std within threshold).
    Pixels outside the grid or flagged nodata never contribute.
    """
    values = np.asarray(values, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    best = valid & (np.asarray(qa) == 3)
    nrows, ncols = valid.shape
    v = np.pad(np.where(valid, values, 0.0), 1)
    m = np.pad(valid, 1)
    b = np.pad(best, 1)

    def shifted(a, dr, dc):
        return a[1 + dr:1 + dr + nrows, 1 + dc:1 + dc + ncols]

    n = np.zeros((nrows, ncols), dtype=np.int64)
    total = np.zeros((nrows, ncols))
    n_best = np.zeros((nrows, ncols), dtype=np.int64)
    for dr, dc in _OFFSETS:
        n += shifted(m, dr, dc)
        total += shifted(v, dr, dc)
        n_best += shifted(b, dr, dc)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(n > 0, total / np.maximum(n, 1), np.nan)
        sq = np.zeros((nrows, ncols))
        for dr, dc in _OFFSETS:
            sq += np.where(shifted(m, dr, dc), (shifted(v, dr, dc) - mean) ** 2, 0.0)
        std = np.where(n > 0, np.sqrt(sq / np.maximum(n, 1)), np.nan)
    return {
        "mean": mean,
        "std": std,
        "n_valid": n,
        "weight": n_best / 9.0,
        "valid": (n > 0) & (std <= std_threshold),
    }


def extract_window(grid, location, std_threshold=STD_THRESHOLD):
    """Window sample of ``grid`` around the pixel containing ``location``."""
    east, north = location
    row, col = grid.geometry.cell_index(east, north)
    nrows, ncols = grid.geometry.shape
    values = np.zeros((3, 3))
    valid = np.zeros((3, 3), dtype=bool)
    qa = np.zeros((3, 3), dtype=np.int8)
    grid_valid = grid.valid
    for dr, dc in _OFFSETS:
        r, c = row + dr, col + dc
        if 0 <= r < nrows and 0 <= c < ncols:
            values[1 + dr, 1 + dc] = grid.values[r, c]
            valid[1 + dr, 1 + dc] = grid_valid[r, c]
            qa[1 + dr, 1 + dc] = grid.qa[r, c]
    stats = window_statistics(values, valid, qa, std_threshold)
    return WindowSample(
        stream=grid.stream,
        date=grid.date,
        location=(east, north),
        mean_aod=float(stats["mean"][1, 1]),
        std_aod=float(stats["std"][1, 1]),
        weight=float(stats["weight"][1, 1]),
        n_valid=int(stats["n_valid"][1, 1]),
        valid=bool(stats["valid"][1, 1]),
    )


# --------------------------------------------------------------------------
# Aqua/Terra gap filling and the daily average

@dataclass(frozen=True)
class CrossFillRegression:
    slope: float
    intercept: float
    n_pairs: int
    r: float


def _is_valid(value):
    return value is not None and math.isfinite(value)


def fit_cross_fill(series_a, series_b, min_pairs=MIN_PAIRS):
    """Least-squares line predicting ``series_b`` from ``series_a``.

    Both series map a key (a date, or a ``(station, date)`` pair) to AOD;
    missing or non-finite entries are ignored.
    """
    keys = sorted(k for k in series_a if k in series_b and _is_valid(series_a[k]) and _is_valid(series_b[k]))
    if len(keys) < min_pairs:
        raise InsufficientDataError(f"{len(keys)} co-valid pairs, need at least {min_pairs}")
    a = np.array([series_a[k] for k in keys], dtype=np.float64)
    b = np.array([series_b[k] for k in keys], dtype=np.float64)
    da = a - a.mean()
    db = b - b.mean()
    sxx = float(da @ da)
    if sxx == 0.0:
        raise DegenerateInputError("predictor series is constant")
    sxy = float(da @ db)
    syy = float(db @ db)
    slope = sxy / sxx
    intercept = float(b.mean() - slope * a.mean())
    r = sxy / math.sqrt(sxx * syy) if syy > 0 else 0.0
    return CrossFillRegression(slope, intercept, len(keys), min(1.0, max(-1.0, r)))


def apply_cross_fill(reg, a_value):
    return max(0.0, reg.slope * a_value + reg.intercept)


def daily_average(aod_aqua, aod_terra, reg_a2t=None, reg_t2a=None):
    """Daily MODIS AOD from the Aqua and Terra retrievals.

    A missing platform is first estimated from the other with the matching
    regression (``reg_a2t`` predicts Terra from Aqua).  Returns ``None`` when
    no value can be formed.
    """
    has_aqua, has_terra = _is_valid(aod_aqua), _is_valid(aod_terra)
    if has_aqua and has_terra:
        return (aod_aqua + aod_terra) / 2
    if has_aqua and reg_a2t is not None:
        return (aod_aqua + apply_cross_fill(reg_a2t, aod_aqua)) / 2
    if has_terra and reg_t2a is not None:
        return (apply_cross_fill(reg_t2a, aod_terra) + aod_terra) / 2
    return None


def daily_average_arrays(aqua, aqua_valid, terra, terra_valid, reg_a2t=None, reg_t2a=None):
    """Array version of :func:`daily_average`; returns ``(values, valid)``."""
    aqua = np.asarray(aqua, dtype=np.float64)
    terra = np.asarray(terra, dtype=np.float64)
    both = aqua_valid & terra_valid
    out = np.full(aqua.shape, np.nan)
    out[both] = (aqua[both] + terra[both]) / 2
    valid = both.copy()
    if reg_a2t is not None:
        only = aqua_valid & ~terra_valid
        a = aqua[only]
        out[only] = (a + np.maximum(0.0, reg_a2t.slope * a + reg_a2t.intercept)) / 2
        valid |= only
    if reg_t2a is not None:
        only = terra_valid & ~aqua_valid
        t = terra[only]
        out[only] = (np.maximum(0.0, reg_t2a.slope * t + reg_t2a.intercept) + t) / 2
        valid |= only
    return out, valid


# --------------------------------------------------------------------------
# scalar corrections

def correct_pm25(pm, rh, rh_max=RH_MAX):
    """Humidity-corrected PM2.5 for a dry-mass (heated inlet) measurement."""
    if not (math.isfinite(pm) and pm >= 0):
        raise ValidationError(f"pm must be finite and >= 0, got {pm!r}")
    if not 0 <= rh <= 100:
        raise ValidationError(f"rh must lie in [0, 100], got {rh!r}")
    rh = min(rh, rh_max)
    return pm / (1 - rh / 100)


def normalize_aod(aod, blh, blh_min=BLH_MIN):
    return aod / max(blh, blh_min)


def day_of_year(date):
    return date.timetuple().tm_yday


# --------------------------------------------------------------------------

def corrected_stations(stations, rh_at, rh_max=RH_MAX):
    """Stations with ``pm25_corrected`` filled from ``rh_at[(station_id, date)]``.

    Records without a humidity value are dropped.
    """
    out = []
    for rec in stations:
        rh = rh_at.get(rec.key)
        if rh is None:
            continue
        out.append(
            StationRecord(rec.station_id, rec.east, rec.north, rec.date, rec.pm25_raw,
                          correct_pm25(rec.pm25_raw, rh, rh_max))
        )
    return out


def feature_row(aod_normalized, east, north, met, date):
    """One feature vector in ``FEATURE_NAMES`` order."""
    row = [aod_normalized, east, north]
    row += [getattr(met, _MET_FEATURES[name]) for name in FEATURE_NAMES[3:-1]]
    row.append(float(day_of_year(date)))
    return row


def build_training_matrix(aod, stations, met):
    """Join normalized AOD, station targets and met covariates.

    Parameters
    ----------
    aod : dict
        ``(station_id, date) -> BLH-normalized AOD`` for one product.
    stations : list of StationRecord
        Records with ``pm25_corrected`` set.
    met : dict
        ``(station_id, date) -> MetRecord`` at the station.

    Returns
    -------
    matrix : TrainingMatrix
    n_dropped : int
        Station-days dropped for a missing feature or target.
    """
    from .mlcore.matrix import TrainingMatrix

    rows, targets, keys = [], [], []
    missing = {"aod": 0, "met": 0, "target": 0}
    for rec in sorted(stations, key=lambda r: (r.date, r.station_id)):
        value = aod.get(rec.key)
        met_rec = met.get(rec.key)
        if value is None or not math.isfinite(value):
            missing["aod"] += 1
            continue
        if met_rec is None:
            missing["met"] += 1
            continue
        if rec.pm25_corrected is None:
            missing["target"] += 1
            continue
        rows.append(feature_row(value, rec.east, rec.north, met_rec, rec.date))
        targets.append(rec.pm25_corrected)
        keys.append(rec.key)
    n_dropped = sum(missing.values())
    if not rows:
        raise PipelineError(
            f"training matrix is empty: {len(stations)} station-days, missing AOD {missing['aod']}, "
            f"missing met {missing['met']}, missing target {missing['target']}"
        )
    matrix = TrainingMatrix(FEATURE_NAMES, np.array(rows, dtype=np.float64), np.array(targets), keys)
    return matrix, n_dropped
