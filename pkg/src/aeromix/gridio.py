"""Gridded AOD products, station tables and meteorological tables.

Grids are stored in AGF, a small UTF-8 text format modelled on the ESRI
ASCII grid::

    ncols = 4
    nrows = 2
    xllcorner = 500000.0
    yllcorner = 3900000.0
    cellsize = 1000.0
    nodata_value = -9999.0
    sensor = MODIS-Terra
    algorithm = DB
    date = 2013-01-24
    VALUES
    <nrows lines of ncols floats>
    QA
    <nrows lines of ncols integers>

The first VALUES row is the northernmost one.  Values are float32 and are
written with 9 significant digits, which round-trips float32 exactly.
Map grids (PM2.5 surfaces) use the same layout without the QA block and
without sensor/algorithm keys.
"""

import csv
import datetime as dt
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .exceptions import (
    DuplicateKeyError,
    GeometryMismatchError,
    GridFormatError,
    TableFormatError,
    ValidationError,
)

DEFAULT_NODATA = -9999.0
_GEOMETRY_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


class Sensor(str, Enum):
    MODIS_TERRA = "MODIS-Terra"
    MODIS_AQUA = "MODIS-Aqua"
    VIIRS_SNPP = "VIIRS-SNPP"


class Algorithm(str, Enum):
    DB = "DB"
    DT = "DT"


# Daily products used for decision-level fusion, in Table-3 column order.
PRODUCTS = ("MDB", "MDT", "VDB", "VDT")


def stream_name(sensor, algorithm):
    """Identifier of one retrieval stream, e.g. ``"MODIS-Aqua_DB"``."""
    return f"{Sensor(sensor).value}_{Algorithm(algorithm).value}"


def product_of(sensor, algorithm):
    """Daily product a stream contributes to (``MODIS-Aqua``/``DB`` -> ``MDB``)."""
    prefix = "V" if Sensor(sensor) is Sensor.VIIRS_SNPP else "M"
    return prefix + Algorithm(algorithm).value


def streams_of(product):
    """Streams feeding a daily product, Aqua before Terra for MODIS."""
    algorithm = Algorithm(product[1:])
    if product[0] == "V":
        return [stream_name(Sensor.VIIRS_SNPP, algorithm)]
    if product[0] == "M":
        return [stream_name(Sensor.MODIS_AQUA, algorithm), stream_name(Sensor.MODIS_TERRA, algorithm)]
    raise ValueError(f"unknown product {product!r}")


@dataclass(frozen=True)
class GridGeometry:
    nrows: int
    ncols: int
    origin_east: float
    origin_north: float
    cellsize: float

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    def cell_index(self, east, north):
        """Row/column of the cell containing ``(east, north)``.

        Row 0 is the northernmost row.  Raises ``ValueError`` outside the grid.
        """
        col = math.floor((east - self.origin_east) / self.cellsize)
        row_from_south = math.floor((north - self.origin_north) / self.cellsize)
        # the outer north/east edges belong to the last cell
        if east == self.origin_east + self.ncols * self.cellsize:
            col = self.ncols - 1
        if north == self.origin_north + self.nrows * self.cellsize:
            row_from_south = self.nrows - 1
        if not (0 <= col < self.ncols and 0 <= row_from_south < self.nrows):
            raise ValueError(f"location ({east}, {north}) lies outside the grid")
        return self.nrows - 1 - row_from_south, col

    def cell_centers(self):
        """Arrays ``(east, north)`` of shape ``(nrows, ncols)``."""
        cols = self.origin_east + (np.arange(self.ncols) + 0.5) * self.cellsize
        rows = self.origin_north + (self.nrows - np.arange(self.nrows) - 0.5) * self.cellsize
        return np.meshgrid(cols, rows)

    def contains(self, east, north):
        try:
            self.cell_index(east, north)
        except ValueError:
            return False
        return True


@dataclass(frozen=True, eq=False)
class AODGrid:
    """One product's AOD for one day, with per-pixel QA codes.

    ``values`` and ``qa`` are ``(nrows, ncols)`` arrays; ``values`` is float32.
    A pixel is valid iff its value differs from ``nodata``.
    """

    geometry: GridGeometry
    values: np.ndarray
    qa: np.ndarray
    sensor: Sensor
    algorithm: Algorithm
    date: dt.date
    nodata: float = DEFAULT_NODATA

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        qa = np.asarray(self.qa)
        if values.shape != self.geometry.shape:
            raise ValidationError(f"values shape {values.shape} != grid shape {self.geometry.shape}")
        if qa.shape != self.geometry.shape:
            raise ValidationError(f"qa shape {qa.shape} != grid shape {self.geometry.shape}")
        if qa.size and (qa.min() < 0 or qa.max() > 3):
            raise ValidationError("qa codes must lie in 0..3")
        if not np.all(np.equal(np.mod(qa, 1), 0)):
            raise ValidationError("qa codes must be integers")
        valid = values != np.float32(self.nodata)
        bad = valid & ~(np.isfinite(values) & (values >= 0))
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ValidationError(f"invalid AOD {values[r, c]!r} at row {r}, col {c}")
        values.setflags(write=False)
        qa = qa.astype(np.int8)
        qa.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "qa", qa)
        object.__setattr__(self, "sensor", Sensor(self.sensor))
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "nodata", float(np.float32(self.nodata)))

    @property
    def valid(self):
        return self.values != np.float32(self.nodata)

    @property
    def stream(self):
        return stream_name(self.sensor, self.algorithm)

    @property
    def product(self):
        return product_of(self.sensor, self.algorithm)

    def __eq__(self, other):
        if not isinstance(other, AODGrid):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.sensor == other.sensor
            and self.algorithm == other.algorithm
            and self.date == other.date
            and self.nodata == other.nodata
            and np.array_equal(self.values.view(np.uint32), other.values.view(np.uint32))
            and np.array_equal(self.qa, other.qa)
        )

    __hash__ = None


# --------------------------------------------------------------------------
# AGF text format

def write_agf(path, geometry, values, nodata=DEFAULT_NODATA, qa=None, extra=None):
    """Low-level AGF writer; ``extra`` holds additional header keys."""
    values = np.asarray(values, dtype=np.float32)
    lines = [
        f"ncols = {geometry.ncols}",
        f"nrows = {geometry.nrows}",
        f"xllcorner = {float(geometry.origin_east)!r}",
        f"yllcorner = {float(geometry.origin_north)!r}",
        f"cellsize = {float(geometry.cellsize)!r}",
        f"nodata_value = {float(np.float32(nodata))!r}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    lines.append("VALUES")
    for row in values:
        lines.append(" ".join(f"{v:.9g}" for v in row.tolist()))
    if qa is not None:
        lines.append("QA")
        for row in np.asarray(qa):
            lines.append(" ".join(str(int(q)) for q in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_agf(path):
    """Low-level AGF reader.

    Returns ``(header, geometry, nodata, values, qa)`` where ``header`` maps
    the remaining keys to raw strings and ``qa`` is ``None`` when absent.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise GridFormatError(f"not UTF-8 text ({exc})", path) from None
    lines = text.splitlines()
    header = {}
    i = 0
    while i < len(lines) and lines[i].strip() != "VALUES":
        line = lines[i].strip()
        if line:
            if "=" not in line:
                raise GridFormatError(f"expected 'key = value', got {line!r}", path, i + 1)
            key, value = (part.strip() for part in line.split("=", 1))
            if key in header:
                raise GridFormatError(f"duplicate header key {key!r}", path, i + 1)
            header[key] = value
        i += 1
    if i == len(lines):
        raise GridFormatError("missing VALUES section", path)
    for key in _GEOMETRY_KEYS:
        if key not in header:
            raise GridFormatError(f"missing header key {key!r}", path)

    def number(key, kind):
        raw = header.pop(key)
        try:
            value = kind(raw)
        except ValueError:
            raise GridFormatError(f"header field {key!r}: cannot parse {raw!r}", path) from None
        return value

    ncols = number("ncols", int)
    nrows = number("nrows", int)
    if ncols <= 0 or nrows <= 0:
        raise GridFormatError("ncols and nrows must be positive", path)
    geometry = GridGeometry(
        nrows=nrows,
        ncols=ncols,
        origin_east=number("xllcorner", float),
        origin_north=number("yllcorner", float),
        cellsize=number("cellsize", float),
    )
    if not geometry.cellsize > 0:
        raise GridFormatError("header field 'cellsize' must be positive", path)
    nodata = number("nodata_value", float)

    def block(start, kind, name):
        rows = []
        j = start
        while j < len(lines) and lines[j].strip() not in ("QA", "VALUES"):
            if lines[j].strip():
                tokens = lines[j].split()
                if len(tokens) != ncols:
                    raise GridFormatError(
                        f"{name} row has {len(tokens)} entries, header says ncols={ncols}", path, j + 1
                    )
                try:
                    rows.append([kind(t) for t in tokens])
                except ValueError:
                    raise GridFormatError(f"unparsable {name} entry", path, j + 1) from None
            j += 1
        if len(rows) != nrows:
            raise GridFormatError(f"{name} block has {len(rows)} rows, header says nrows={nrows}", path, j)
        return rows, j

    rows, j = block(i + 1, float, "VALUES")
    values = np.array(rows, dtype=np.float32)
    qa = None
    if j < len(lines):
        if lines[j].strip() != "QA":
            raise GridFormatError(f"unexpected section {lines[j].strip()!r}", path, j + 1)
        qa_rows, j = block(j + 1, int, "QA")
        qa = np.array(qa_rows, dtype=np.int64)
        if j < len(lines):
            raise GridFormatError(f"unexpected section {lines[j].strip()!r}", path, j + 1)
    return header, geometry, nodata, values, qa


def load_grid(path):
    """Read and validate an AOD grid written by :func:`write_grid`."""
    header, geometry, nodata, values, qa = read_agf(path)
    if qa is None:
        raise GridFormatError("missing QA section", path)
    for key in ("sensor", "algorithm", "date"):
        if key not in header:
            raise GridFormatError(f"missing header key {key!r}", path)
    try:
        sensor = Sensor(header["sensor"])
        algorithm = Algorithm(header["algorithm"])
    except ValueError as exc:
        raise GridFormatError(f"header: {exc}", path) from None
    try:
        date = dt.date.fromisoformat(header["date"])
    except ValueError:
        raise GridFormatError(f"header field 'date': cannot parse {header['date']!r}", path) from None
    if qa.min() < 0 or qa.max() > 3:
        r, c = np.argwhere((qa < 0) | (qa > 3))[0]
        raise GridFormatError(f"QA code {qa[r, c]} outside 0..3 at row {r}, col {c}", path)
    try:
        return AODGrid(geometry, values, qa, sensor, algorithm, date, nodata)
    except ValidationError as exc:
        raise GridFormatError(str(exc), path) from None


def write_grid(grid, path):
    write_agf(
        path,
        grid.geometry,
        grid.values,
        nodata=grid.nodata,
        qa=grid.qa,
        extra={
            "sensor": grid.sensor.value,
            "algorithm": grid.algorithm.value,
            "date": grid.date.isoformat(),
        },
    )


def merge_swaths(grids):
    """Combine overlapping swaths of one product/day into a single grid.

    Overlapping valid pixels are averaged; the QA of a merged pixel is the
    best (maximum) code among the swaths that contributed to it.
    """
    grids = list(grids)
    if not grids:
        raise ValueError("merge_swaths needs at least one grid")
    first = grids[0]
    for g in grids[1:]:
        if (g.geometry, g.sensor, g.algorithm, g.date) != (first.geometry, first.sensor, first.algorithm, first.date):
            raise GeometryMismatchError("swaths differ in geometry, sensor, algorithm or date")
        if g.nodata != first.nodata:
            raise GeometryMismatchError("swaths use different nodata sentinels")
    if len(grids) == 1:
        return first
    valid = np.stack([g.valid for g in grids])
    values = np.stack([g.values.astype(np.float64) for g in grids])
    count = valid.sum(axis=0)
    total = np.where(valid, values, 0.0).sum(axis=0)
    qa = np.where(valid, np.stack([g.qa for g in grids]), -1).max(axis=0)
    covered = count > 0
    merged = np.full(first.geometry.shape, first.nodata, dtype=np.float32)
    merged[covered] = (total[covered] / count[covered]).astype(np.float32)
    qa = np.where(covered, qa, 0)
    return AODGrid(first.geometry, merged, qa, first.sensor, first.algorithm, first.date, first.nodata)


# --------------------------------------------------------------------------
# station and meteorological tables

STATION_COLUMNS = ("station_id", "east", "north", "date", "pm25")
MET_VARIABLES = ("dpt", "t", "blh", "sp", "lai_hv", "lai_lv", "ws", "wd", "cdir", "uvb", "rh")
MET_COLUMNS = ("east", "north", "date") + MET_VARIABLES


@dataclass(frozen=True)
class StationRecord:
    station_id: str
    east: float
    north: float
    date: dt.date
    pm25_raw: float
    pm25_corrected: float = None

    def __post_init__(self):
        if not (math.isfinite(self.pm25_raw) and self.pm25_raw >= 0):
            raise ValidationError(f"pm25 must be finite and >= 0, got {self.pm25_raw!r}")
        if self.pm25_corrected is not None and not self.pm25_corrected >= self.pm25_raw:
            raise ValidationError("corrected PM2.5 must not be below the raw value")

    @property
    def key(self):
        return (self.station_id, self.date)


@dataclass(frozen=True)
class MetRecord:
    east: float
    north: float
    date: dt.date
    dpt: float
    t: float
    blh: float
    sp: float
    lai_hv: float
    lai_lv: float
    ws: float
    wd: float
    cdir: float
    uvb: float
    rh: float

    def __post_init__(self):
        for name in MET_VARIABLES:
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"met field {name} is not finite")
        if not self.blh > 0:
            raise ValidationError(f"blh must be positive, got {self.blh!r}")
        if not 0 <= self.rh <= 100:
            raise ValidationError(f"rh must lie in [0, 100], got {self.rh!r}")


def _read_rows(path, columns):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise TableFormatError(f"{path}: empty table")
        missing = [c for c in columns if c not in reader.fieldnames]
        if missing:
            raise TableFormatError(f"{path}: missing column(s) {', '.join(missing)}")
        for lineno, row in enumerate(reader, start=2):
            yield lineno, row


def _parse(path, lineno, row, column, kind):
    raw = row[column]
    try:
        if kind is dt.date:
            return dt.date.fromisoformat(raw.strip())
        return kind(raw)
    except (ValueError, TypeError, AttributeError):
        raise TableFormatError(f"{path}:{lineno}: column {column!r}: cannot parse {raw!r}") from None


def load_station_table(path):
    records = []
    seen = set()
    for lineno, row in _read_rows(path, STATION_COLUMNS):
        station_id = row["station_id"].strip()
        if not station_id:
            raise TableFormatError(f"{path}:{lineno}: empty station_id")
        date = _parse(path, lineno, row, "date", dt.date)
        if (station_id, date) in seen:
            raise DuplicateKeyError(f"{path}:{lineno}: duplicate (station_id, date) = ({station_id}, {date})")
        seen.add((station_id, date))
        try:
            records.append(
                StationRecord(
                    station_id,
                    _parse(path, lineno, row, "east", float),
                    _parse(path, lineno, row, "north", float),
                    date,
                    _parse(path, lineno, row, "pm25", float),
                )
            )
        except ValidationError as exc:
            raise TableFormatError(f"{path}:{lineno}: {exc}") from None
    return records


def load_met_table(path):
    records = []
    seen = set()
    for lineno, row in _read_rows(path, MET_COLUMNS):
        kwargs = {c: _parse(path, lineno, row, c, float) for c in ("east", "north") + MET_VARIABLES}
        kwargs["date"] = _parse(path, lineno, row, "date", dt.date)
        key = (kwargs["east"], kwargs["north"], kwargs["date"])
        if key in seen:
            raise DuplicateKeyError(f"{path}:{lineno}: duplicate (east, north, date) = {key}")
        seen.add(key)
        try:
            records.append(MetRecord(**kwargs))
        except ValidationError as exc:
            raise TableFormatError(f"{path}:{lineno}: {exc}") from None
    return records


def write_station_table(records, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STATION_COLUMNS)
        for r in records:
            writer.writerow([r.station_id, repr(float(r.east)), repr(float(r.north)), r.date.isoformat(), repr(float(r.pm25_raw))])


def write_met_table(records, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MET_COLUMNS)
        for r in records:
            writer.writerow(
                [repr(float(r.east)), repr(float(r.north)), r.date.isoformat()]
                + [repr(float(getattr(r, name))) for name in MET_VARIABLES]
            )
