"""Assemble grids, station and met tables into per-product samples.

A ``Dataset`` holds, for every retrieval stream, the 3x3 window statistics
of every cell on every day, and for every daily product the AOD and
validity arrays after the reliability filter and the Aqua/Terra average.
From these it builds the station training matrices and the fused
data-level matrix.

A cell counts as covered by a stream when its own pixel is valid and its
window passes the reliability filter.  Station samples use the window
alone, as a station may sit on a nodata pixel with valid neighbours.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import (
    DegenerateInputError,
    GeometryMismatchError,
    InputMissingError,
    InsufficientDataError,
    PipelineError,
)
from .gridio import (
    MET_VARIABLES,
    PRODUCTS,
    MetRecord,
    load_grid,
    load_met_table,
    load_station_table,
    merge_swaths,
    streams_of,
)
from .kriging import VariogramModel, fit_variogram, kriging_weights
from .preprocess import (
    BLH_MIN,
    MIN_PAIRS,
    RH_MAX,
    STD_THRESHOLD,
    build_training_matrix,
    corrected_stations,
    daily_average,
    daily_average_arrays,
    fit_cross_fill,
    window_statistics,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Settings:
    std_threshold: float = STD_THRESHOLD
    rh_max: float = RH_MAX
    blh_min: float = BLH_MIN
    min_pairs: int = MIN_PAIRS


@dataclass
class StreamCells:
    """Window statistics of one stream, arrays shaped ``(n_days, nrows, ncols)``."""

    mean: np.ndarray
    weight: np.ndarray
    window_valid: np.ndarray
    pixel_valid: np.ndarray

    @property
    def covered(self):
        return self.pixel_valid & self.window_valid


def _met_model(coords, values):
    """Variogram for one met variable on one day; a flat fallback for tiny samples."""
    try:
        return fit_variogram(coords, values)
    except (InsufficientDataError, DegenerateInputError):
        span = float(np.ptp(coords, axis=0).max()) if len(coords) > 1 else 1.0
        return VariogramModel("exponential", 0.0, float(np.var(values)), max(span, 1.0))


def krige_met(records, targets):
    """Kriged met variables of one day at ``targets`` (``(m, 2)`` array).

    Returns ``variable -> (m,)`` array; each variable gets its own variogram.
    """
    coords = np.array([(r.east, r.north) for r in records], dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 2)
    out = {}
    cache = {}
    for name in MET_VARIABLES:
        values = np.array([getattr(r, name) for r in records], dtype=np.float64)
        model = _met_model(coords, values)
        if model not in cache:
            cache[model] = kriging_weights(coords, model, targets)
        out[name] = cache[model] @ values
    out["rh"] = np.clip(out["rh"], 0.0, 100.0)
    out["blh"] = np.maximum(out["blh"], 1.0)
    return out


class Dataset:
    """Preprocessed samples of one scene.

    Attributes
    ----------
    geometry : GridGeometry
    dates : list of datetime.date
    streams : tuple of str
        Retrieval streams present, e.g. ``"MODIS-Aqua_DB"``.
    cells : dict
        stream -> :class:`StreamCells`.
    product_values, cell_valid : dict
        product -> daily AOD array (NaN where invalid) and coverage mask.
    stations : list of StationRecord
        Station-days inside the grid with the corrected target.
    station_met : dict
        ``(station_id, date)`` -> kriged :class:`MetRecord`.
    station_samples : dict
        stream or product -> ``{(station_id, date): (aod, weight)}``.
    matrices : dict
        product -> :class:`TrainingMatrix`.
    crossfill : dict
        algorithm -> ``(aqua_to_terra, terra_to_aqua)`` regressions or ``None``.
    """

    def __init__(self, grids, stations, met, settings=Settings()):
        self.settings = settings
        grids = list(grids)
        if not grids:
            raise PipelineError("no AOD grids")
        self._merge(grids)
        self._met_by_date = {}
        for rec in met:
            self._met_by_date.setdefault(rec.date, []).append(rec)
        self._stations_in_grid(stations)
        self._met_at_stations()
        self._station_samples()
        self._products()
        self._matrices()

    # ---------------------------------------------------------------- setup
    def _merge(self, grids):
        geometry = grids[0].geometry
        groups = {}
        for g in grids:
            if g.geometry != geometry:
                raise GeometryMismatchError(f"grid {g.stream} {g.date} is not co-registered with the first grid")
            groups.setdefault((g.stream, g.date), []).append(g)
        self.geometry = geometry
        self.dates = sorted({date for _, date in groups})
        self.streams = tuple(sorted({s for s, _ in groups}))
        shape = (len(self.dates),) + geometry.shape
        day = {d: i for i, d in enumerate(self.dates)}
        self.cells = {}
        for stream in self.streams:
            mean = np.full(shape, np.nan)
            weight = np.zeros(shape)
            wvalid = np.zeros(shape, dtype=bool)
            pvalid = np.zeros(shape, dtype=bool)
            for date in self.dates:
                parts = groups.get((stream, date))
                if not parts:
                    continue
                g = merge_swaths(parts)
                stats = window_statistics(g.values, g.valid, g.qa, self.settings.std_threshold)
                i = day[date]
                wvalid[i] = stats["valid"]
                mean[i] = np.where(stats["valid"], stats["mean"], np.nan)
                weight[i] = stats["weight"]
                pvalid[i] = g.valid
            self.cells[stream] = StreamCells(mean, weight, wvalid, pvalid)

    def _stations_in_grid(self, stations):
        kept, self.n_outside = [], 0
        self._station_cell = {}
        for rec in stations:
            if not self.geometry.contains(rec.east, rec.north):
                self.n_outside += 1
                continue
            kept.append(rec)
            self._station_cell[rec.station_id] = self.geometry.cell_index(rec.east, rec.north)
        self._raw_stations = sorted(kept, key=lambda r: (r.date, r.station_id))
        if self.n_outside:
            log.warning("%d station-days lie outside the grid and were dropped", self.n_outside)

    def _met_at_stations(self):
        self.station_met = {}
        by_date = {}
        for rec in self._raw_stations:
            by_date.setdefault(rec.date, []).append(rec)
        for date, recs in sorted(by_date.items()):
            met = self._met_by_date.get(date)
            if not met:
                continue
            values = krige_met(met, [(r.east, r.north) for r in recs])
            for i, r in enumerate(recs):
                self.station_met[r.key] = MetRecord(
                    r.east, r.north, date, **{name: float(values[name][i]) for name in MET_VARIABLES}
                )
        rh = {k: m.rh for k, m in self.station_met.items()}
        self.stations = corrected_stations(self._raw_stations, rh, self.settings.rh_max)

    def _station_samples(self):
        day = {d: i for i, d in enumerate(self.dates)}
        self.station_samples = {}
        for stream, cells in self.cells.items():
            out = {}
            for rec in self.stations:
                i = day.get(rec.date)
                if i is None:
                    continue
                r, c = self._station_cell[rec.station_id]
                if cells.window_valid[i, r, c]:
                    out[rec.key] = (float(cells.mean[i, r, c]), float(cells.weight[i, r, c]))
            self.station_samples[stream] = out

    def _products(self):
        self.crossfill = {}
        self.product_values, self.cell_valid = {}, {}
        for product in PRODUCTS:
            streams = [s for s in streams_of(product) if s in self.cells]
            if not streams:
                continue
            if product.startswith("V"):
                (stream,) = streams
                cells = self.cells[stream]
                self.product_values[product] = np.where(cells.covered, cells.mean, np.nan)
                self.cell_valid[product] = cells.covered
                self.station_samples[product] = {k: v for k, v in self.station_samples[stream].items()}
                continue
            if len(streams) == 1:
                # one platform only: nothing to average
                cells = self.cells[streams[0]]
                self.product_values[product] = np.where(cells.covered, cells.mean, np.nan)
                self.cell_valid[product] = cells.covered
                self.station_samples[product] = dict(self.station_samples[streams[0]])
                continue
            aqua_s, terra_s = streams
            aqua = {k: v[0] for k, v in self.station_samples[aqua_s].items()}
            terra = {k: v[0] for k, v in self.station_samples[terra_s].items()}
            regs = []
            for a, b in ((aqua, terra), (terra, aqua)):
                try:
                    regs.append(fit_cross_fill(a, b, self.settings.min_pairs))
                except (InsufficientDataError, DegenerateInputError) as exc:
                    log.info("%s: no cross-fill regression (%s)", product, exc)
                    regs.append(None)
            self.crossfill[product[1:]] = tuple(regs)
            a2t, t2a = regs
            samples = {}
            for key in sorted(set(aqua) | set(terra), key=lambda k: (k[1], k[0])):
                value = daily_average(aqua.get(key), terra.get(key), a2t, t2a)
                if value is not None:
                    samples[key] = (value, None)
            self.station_samples[product] = samples
            ca, ct = self.cells[aqua_s], self.cells[terra_s]
            values, valid = daily_average_arrays(ca.mean, ca.covered, ct.mean, ct.covered, a2t, t2a)
            self.product_values[product] = values
            self.cell_valid[product] = valid

    def _normalized(self, samples):
        out = {}
        for key, (aod, _) in samples.items():
            met = self.station_met.get(key)
            if met is not None:
                out[key] = aod / max(met.blh, self.settings.blh_min)
        return out

    def _matrices(self):
        self.matrices, self.n_dropped = {}, {}
        for product in self.product_values:
            aod = self._normalized(self.station_samples[product])
            try:
                m, dropped = build_training_matrix(aod, self.stations, self.station_met)
            except PipelineError as exc:
                log.warning("%s: %s", product, exc)
                continue
            self.matrices[product] = m
            self.n_dropped[product] = dropped

    # ---------------------------------------------------------------- queries
    @property
    def products(self):
        return tuple(self.matrices)

    def fused_data_level(self, streams=None):
        """Quality-weighted fused AOD over ``streams``.

        Returns ``(matrix, covered)``: the station training matrix of the
        fused AOD and the cell coverage mask of the fused field.
        """
        streams = tuple(self.streams if streams is None else streams)
        missing = [s for s in streams if s not in self.cells]
        if missing:
            raise PipelineError(f"stream(s) not in the data: {', '.join(missing)}")
        num = np.zeros((len(self.dates),) + self.geometry.shape)
        den = np.zeros_like(num)
        for s in streams:
            c = self.cells[s]
            use = c.covered & (c.weight > 0)
            num += np.where(use, c.weight * np.where(use, c.mean, 0.0), 0.0)
            den += np.where(use, c.weight, 0.0)
        covered = den > 0
        fused = {}
        keys = set().union(*(self.station_samples[s] for s in streams))
        for key in sorted(keys, key=lambda k: (k[1], k[0])):
            n = d = 0.0
            for s in streams:
                sample = self.station_samples[s].get(key)
                if sample is not None and sample[1] > 0:
                    n += sample[1] * sample[0]
                    d += sample[1]
            if d > 0:
                fused[key] = (n / d, None)
        matrix, _ = build_training_matrix(self._normalized(fused), self.stations, self.station_met)
        return matrix, covered

    def met_at_cells(self, date):
        """Kriged met variables on every cell center for ``date``."""
        met = self._met_by_date.get(date)
        if not met:
            raise PipelineError(f"no met records for {date}")
        east, north = self.geometry.cell_centers()
        values = krige_met(met, np.column_stack([east.ravel(), north.ravel()]))
        return {k: v.reshape(self.geometry.shape) for k, v in values.items()}

    # ---------------------------------------------------------------- loading
    @classmethod
    def from_directory(cls, data_dir, settings=Settings()):
        """Load ``grids/*.agf``, ``stations.csv`` and ``met.csv`` from ``data_dir``."""
        data_dir = Path(data_dir)
        if not data_dir.is_dir():
            raise InputMissingError(f"data directory not found: {data_dir}")
        for name in ("stations.csv", "met.csv"):
            if not (data_dir / name).is_file():
                raise InputMissingError(f"missing input table: {data_dir / name}")
        paths = sorted((data_dir / "grids").glob("*.agf"))
        if not paths:
            raise InputMissingError(f"no AOD grids under {data_dir / 'grids'}")
        grids = [load_grid(p) for p in paths]
        return cls(grids, load_station_table(data_dir / "stations.csv"), load_met_table(data_dir / "met.csv"), settings)
