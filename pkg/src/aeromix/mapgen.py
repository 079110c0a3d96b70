"""Daily PM2.5 maps from ground stations and fused-model quasi-stations."""

import csv
import datetime as dt
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import InsufficientDataError, ValidationError
from .gridio import read_agf, write_agf
from .preprocess import BLH_MIN, FEATURE_NAMES

COINCIDENCE = 1e-9  # meters
_CHUNK = 4096

_MET_COLUMNS = {
    "DPT": "dpt", "T": "t", "Blh": "blh", "SP": "sp", "Lai_hv": "lai_hv", "Lai_lv": "lai_lv",
    "WS": "ws", "WD": "wd", "Cdir": "cdir", "Uvb": "uvb", "RH": "rh",
}


@dataclass(frozen=True)
class QuasiStation:
    east: float
    north: float
    date: dt.date
    pm25: float
    source: str

    def __post_init__(self):
        if not np.isfinite(self.pm25):
            raise ValidationError("quasi-station estimate must be finite")


@dataclass(frozen=True, eq=False)
class PM25Map:
    geometry: object
    values: np.ndarray
    date: dt.date
    n_ground: int
    n_quasi: int


def _cell_features(product_value, geometry, met_fields, date, blh_min):
    east, north = geometry.cell_centers()
    columns = {
        "AOD": product_value / np.maximum(met_fields["blh"], blh_min),
        "East": east,
        "North": north,
        "DOY": np.full(geometry.shape, float(date.timetuple().tm_yday)),
    }
    for name, var in _MET_COLUMNS.items():
        columns[name] = met_fields[var]
    return np.stack([columns[name] for name in FEATURE_NAMES], axis=-1)


def generate_quasi_stations(model, product_values, product_valid, met_fields, geometry, date, stride=1,
                            source=None, blh_min=BLH_MIN):
    """One quasi-station per covered cell center.

    A cell is covered when at least one of the scenario's products is valid
    there; the estimate uses the combiner for the products that are.
    ``stride`` keeps only cells whose row and column are multiples of it.

    Parameters
    ----------
    model : DecisionFusionModel
    product_values, product_valid : dict
        product -> ``(nrows, ncols)`` AOD and validity arrays for ``date``.
    met_fields : dict
        met variable -> ``(nrows, ncols)`` array (kriged to the cells).
    """
    if stride < 1:
        raise ValidationError("stride must be at least 1")
    products = model.scenario.products
    missing = [p for p in products if p not in product_valid]
    if missing:
        raise ValidationError(f"no grid for product(s) {', '.join(missing)}")
    for p in products:
        if np.shape(product_valid[p]) != geometry.shape:
            raise ValidationError(f"{p} grid is not co-registered with the map geometry")
    covered = np.logical_or.reduce([np.asarray(product_valid[p], dtype=bool) for p in products])
    thin = np.zeros(geometry.shape, dtype=bool)
    thin[::stride, ::stride] = True
    rows, cols = np.nonzero(covered & thin)
    if len(rows) == 0:
        return []
    decisions = {}
    for p in products:
        ok = np.asarray(product_valid[p], dtype=bool)[rows, cols]
        d = np.full(len(rows), np.nan)
        if ok.any():
            X = _cell_features(np.asarray(product_values[p], dtype=np.float64), geometry, met_fields, date, blh_min)
            d[ok] = model.base_models[p].predict(X[rows[ok], cols[ok]])
        decisions[p] = d
    estimates = model.predict_available(decisions)
    east, north = geometry.cell_centers()
    source = source or f"scenario{model.scenario.id}"
    return [
        QuasiStation(float(east[r, c]), float(north[r, c]), date, float(v), source)
        for r, c, v in zip(rows, cols, estimates)
        if np.isfinite(v)
    ]


class IDWInterpolator(RegressorMixin, BaseEstimator):
    """Inverse-distance weighting over 2-D coordinates.

    Points at the same location are merged (their values averaged), so
    duplicated inputs do not change predictions.  A query closer than
    ``1e-9`` m to a point returns that point's value (the average, if
    several points are that close).
    """

    def __init__(self, power=2.0):
        self.power = power

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if X.shape[1] != 2:
            raise ValidationError("IDW coordinates must have two columns")
        if not self.power > 0:
            raise ValidationError("power must be positive")
        locations, inverse = np.unique(X, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        counts = np.bincount(inverse)
        self.points_ = locations
        self.values_ = np.bincount(inverse, weights=y) / counts
        self.offset_ = float(self.values_.min())
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        out = np.empty(len(X))
        for start in range(0, len(X), _CHUNK):
            d = cdist(X[start:start + _CHUNK], self.points_)
            hit = d < COINCIDENCE
            with np.errstate(divide="ignore", invalid="ignore"):
                w = np.where(hit, 0.0, d ** -self.power)
                # offset by the minimum so equal values come back exactly
                est = self.offset_ + (w @ (self.values_ - self.offset_)) / w.sum(axis=1)
            rows = hit.any(axis=1)
            if rows.any():
                h = hit[rows]
                est[rows] = (h @ self.values_) / h.sum(axis=1)
            out[start:start + _CHUNK] = est
        return out


def idw_interpolate(points, values, geometry, power=2.0, date=None, n_ground=None, n_quasi=0):
    """IDW surface on the cell centers of ``geometry``.

    ``points`` is an ``(n, 2)`` array of ``(east, north)``; at least one is
    required.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    values = np.asarray(values, dtype=np.float64).ravel()
    if len(points) == 0:
        raise InsufficientDataError("IDW needs at least one point")
    east, north = geometry.cell_centers()
    model = IDWInterpolator(power).fit(points, values)
    surface = model.predict(np.column_stack([east.ravel(), north.ravel()])).reshape(geometry.shape)
    n_ground = len(points) - n_quasi if n_ground is None else n_ground
    return PM25Map(geometry, surface, date, n_ground, n_quasi)


def write_map(pm_map, path):
    extra = {"quantity": "pm25", "n_ground": pm_map.n_ground, "n_quasi": pm_map.n_quasi}
    if pm_map.date is not None:
        extra["date"] = pm_map.date.isoformat()
    write_agf(path, pm_map.geometry, pm_map.values, extra=extra)


def read_map(path):
    header, geometry, nodata, values, _ = read_agf(path)
    date = dt.date.fromisoformat(header["date"]) if "date" in header else None
    return PM25Map(geometry, values.astype(np.float64), date, int(header.get("n_ground", 0)),
                   int(header.get("n_quasi", 0)))


def write_quasi_stations(stations, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("east", "north", "date", "pm25", "source"))
        for q in stations:
            writer.writerow((repr(q.east), repr(q.north), q.date.isoformat(), repr(q.pm25), q.source))


# --------------------------------------------------------------------------
# rendering

# color stops of the "aqi" palette (fraction of the value range -> RGB)
AQI_STOPS = (
    (0.0, (0, 228, 0)),
    (0.2, (255, 255, 0)),
    (0.4, (255, 126, 0)),
    (0.6, (255, 0, 0)),
    (0.8, (143, 63, 151)),
    (1.0, (126, 0, 35)),
)
PALETTES = ("gray", "aqi")


@dataclass(frozen=True)
class RenderResult:
    image: Path
    world_file: Path
    log: Path
    n_below: int
    n_above: int


def render_map(pm_map, path, palette="aqi", vmin=0.0, vmax=150.0):
    """Write ``pm_map`` as a binary PGM (``gray``) or PPM (``aqi``) image.

    Values outside ``[vmin, vmax]`` are clamped and counted in a log next to
    the image.  A world file named by the usual convention (first and last
    letter of the extension plus ``w``, so ``map.ppm`` -> ``map.pmw``)
    georeferences the pixel centers.
    """
    if palette not in PALETTES:
        raise ValidationError(f"unknown palette {palette!r}; choose from {PALETTES}")
    if not vmax > vmin:
        raise ValidationError("palette bounds need vmax > vmin")
    values = np.asarray(pm_map.values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValidationError("map contains non-finite values")
    path = Path(path)
    n_below = int(np.count_nonzero(values < vmin))
    n_above = int(np.count_nonzero(values > vmax))
    frac = (np.clip(values, vmin, vmax) - vmin) / (vmax - vmin)
    nrows, ncols = values.shape
    if palette == "gray":
        pixels = np.rint(frac * 255).astype(np.uint8)
        header = f"P5\n{ncols} {nrows}\n255\n"
    else:
        xs = np.array([s[0] for s in AQI_STOPS])
        rgb = np.array([s[1] for s in AQI_STOPS], dtype=np.float64)
        pixels = np.stack([np.rint(np.interp(frac, xs, rgb[:, k])) for k in range(3)], axis=-1).astype(np.uint8)
        header = f"P6\n{ncols} {nrows}\n255\n"
    path.write_bytes(header.encode("ascii") + pixels.tobytes())

    g = pm_map.geometry
    world = path.with_suffix(path.suffix[:2] + path.suffix[-1] + "w") if len(path.suffix) >= 3 else Path(f"{path}w")
    top = g.origin_north + g.nrows * g.cellsize
    world.write_text(
        "\n".join(repr(float(v)) for v in (g.cellsize, 0.0, 0.0, -g.cellsize,
                                             g.origin_east + g.cellsize / 2, top - g.cellsize / 2)) + "\n",
        encoding="ascii",
    )
    log = Path(f"{path}.log")
    log.write_text(
        f"palette {palette}\nvmin {vmin!r}\nvmax {vmax!r}\nclipped_below {n_below}\nclipped_above {n_above}\n",
        encoding="ascii",
    )
    return RenderResult(path, world, log, n_below, n_above)
