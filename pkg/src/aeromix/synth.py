"""Synthetic multi-sensor scenes with known ground truth.

Random fields are white noise smoothed by three passes of a box filter.
Three passes of width ``w`` have the variance of a Gaussian kernel with
``sigma**2 = 3 * (w**2 - 1) / 12`` cells, so a correlation length ``L``
(meters, read as that kernel sigma) maps to the nearest odd
``w = sqrt(4 * (L / cellsize)**2 + 1)``.  Fields are generated with a margin
and cropped, then divided by the kernel norm so every pixel has unit
variance.

Validity masks threshold correlated latent Gaussian fields; the latent
correlation is solved so the pairwise correlation of the 0/1 masks equals
``mask_correlation``.  A pixel gets QA 3 when its standardized retrieval
error lies inside the central ``qa_fidelity`` probability mass.
"""

import dataclasses
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.optimize import brentq
from scipy.stats import multivariate_normal, norm

from .config import format_kv, parse_scalar, read_kv
from .exceptions import ConfigError
from .gridio import (
    PRODUCTS,
    AODGrid,
    Algorithm,
    GridGeometry,
    MetRecord,
    Sensor,
    StationRecord,
    write_agf,
    write_grid,
    write_met_table,
    write_station_table,
)
from .preprocess import RH_MAX

_PRODUCT_SLOT = {p: i for i, p in enumerate(PRODUCTS)}
_MET_SPEC = {
    # variable: (base, spatial amplitude, daily amplitude)
    "t": (283.0, 3.0, 6.0),
    "rh": (45.0, 12.0, 10.0),
    "blh": (800.0, 250.0, 300.0),
    "sp": (86000.0, 400.0, 300.0),
    "lai_hv": (1.5, 0.4, 0.1),
    "lai_lv": (1.1, 0.3, 0.1),
    "ws": (3.0, 0.8, 1.0),
    "wd": (math.pi, 0.8, 0.8),
    "cdir": (1.2e7, 1.5e6, 2e6),
    "uvb": (4.0e5, 4e4, 6e4),
}


@dataclass(frozen=True)
class ProductDegradation:
    bias: float = 0.0
    noise_sd: float = 0.0
    validity: float = 1.0
    qa_fidelity: float = 1.0

    def __post_init__(self):
        if not 0 <= self.validity <= 1:
            raise ConfigError("validity must lie in [0, 1]")
        if not 0 <= self.qa_fidelity <= 1:
            raise ConfigError("qa_fidelity must lie in [0, 1]")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")


@dataclass(frozen=True)
class SceneConfig:
    seed: int
    nrows: int = 100
    ncols: int = 100
    cellsize: float = 1000.0
    origin_east: float = 500000.0
    origin_north: float = 3900000.0
    n_days: int = 60
    start_date: dt.date = dt.date(2013, 1, 1)
    n_stations: int = 21
    report_rate: float = 1.0
    aod_mean: float = 0.4
    aod_sd: float = 0.15
    aod_corr_length: float = 15000.0
    noise_corr_length: float = 8000.0
    mask_corr_length: float = 3000.0
    mask_correlation: float = 0.0
    modis_overlap: float = 0.5
    platform_noise_sd: float = 0.01
    n_swaths: int = 1
    met_spacing: float = 10000.0
    met_noise: float = 1.0
    pm_offset: float = 8.0
    pm_aod: float = 50000.0
    pm_rh: float = 0.1
    pm_t: float = -0.3
    pm_interaction: float = 1.0
    pm_nonlinear: float = 2.0
    pm_noise_sd: float = 2.0
    products: dict = field(default_factory=lambda: {p: ProductDegradation() for p in PRODUCTS})

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        if self.nrows < 3 or self.ncols < 3 or self.n_days < 1 or self.n_stations < 1:
            raise ConfigError("scene needs at least a 3x3 grid, one day and one station")
        if not self.cellsize > 0 or not self.met_spacing > 0:
            raise ConfigError("cellsize and met_spacing must be positive")
        for name in ("report_rate", "modis_overlap"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not -1 <= self.mask_correlation <= 1:
            raise ConfigError("mask_correlation must lie in [-1, 1]")
        if self.n_swaths not in (1, 2):
            raise ConfigError("n_swaths must be 1 or 2")
        unknown = set(self.products) - set(PRODUCTS)
        if unknown or not self.products:
            raise ConfigError(f"products must be a nonempty subset of {PRODUCTS}")
        object.__setattr__(self, "products", {p: self.products[p] for p in PRODUCTS if p in self.products})

    @property
    def geometry(self):
        return GridGeometry(self.nrows, self.ncols, self.origin_east, self.origin_north, self.cellsize)

    @property
    def dates(self):
        return [self.start_date + dt.timedelta(days=d) for d in range(self.n_days)]

    # key = value round trip
    def to_mapping(self):
        out = {}
        for f in dataclasses.fields(self):
            if f.name == "products":
                continue
            value = getattr(self, f.name)
            out[f.name] = value.isoformat() if isinstance(value, dt.date) else repr(value)
        out["products"] = ",".join(self.products)
        for p, deg in self.products.items():
            for f in dataclasses.fields(deg):
                out[f"product.{p}.{f.name}"] = repr(getattr(deg, f.name))
        return out

    @classmethod
    def from_mapping(cls, mapping):
        kwargs, product_args = {}, {}
        names = {f.name for f in dataclasses.fields(cls)}
        selected = None
        for key, raw in mapping.items():
            if key == "products":
                selected = [s.strip() for s in raw.split(",") if s.strip()]
            elif key.startswith("product."):
                _, p, attr = key.split(".", 2)
                product_args.setdefault(p, {})[attr] = float(raw)
            elif key == "start_date":
                kwargs[key] = dt.date.fromisoformat(raw)
            elif key in names:
                kwargs[key] = parse_scalar(raw)
            else:
                raise ConfigError(f"unknown scene config key {key!r}")
        # without a product list, the products given settings are the scene's products
        selected = selected if selected is not None else list(product_args) or list(PRODUCTS)
        stray = sorted(set(product_args) - set(selected))
        if stray:
            raise ConfigError(f"settings for product(s) not in the scene: {', '.join(stray)}")
        try:
            kwargs["products"] = {p: ProductDegradation(**product_args.get(p, {})) for p in selected}
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path):
        return cls.from_mapping(read_kv(path))


def box_width(corr_length, cellsize):
    """Odd box width whose three-pass blur has sigma ``corr_length / cellsize``."""
    target = math.sqrt(4 * (corr_length / cellsize) ** 2 + 1)
    return 2 * int(round((target - 1) / 2)) + 1


def smooth_field(rng, shape, corr_length, cellsize, passes=3):
    """Unit-variance smoothed Gaussian noise of ``shape``."""
    w = box_width(corr_length, cellsize)
    if w <= 1:
        return rng.standard_normal(shape)
    margin = passes * (w // 2)
    z = rng.standard_normal((shape[0] + 2 * margin, shape[1] + 2 * margin))
    kernel = np.ones(1)
    for _ in range(passes):
        for axis in (0, 1):
            z = uniform_filter1d(z, w, axis=axis, mode="constant")
        kernel = np.convolve(kernel, np.ones(w) / w)
    z = z[margin:margin + shape[0], margin:margin + shape[1]]
    return z / float(kernel @ kernel)


def _latent_correlation(validity, rho):
    """Latent Gaussian correlation giving 0/1 indicator correlation ``rho`` at validity ``validity``."""
    if rho == 0 or validity in (0.0, 1.0):
        return 0.0
    t = norm.ppf(validity)
    target = validity**2 + rho * validity * (1 - validity)

    def gap(r):
        return multivariate_normal.cdf([t, t], cov=[[1, r], [r, 1]]) - target

    lo, hi = (-0.999, 0.0) if rho < 0 else (0.0, 0.999)
    if gap(lo) * gap(hi) > 0:
        raise ConfigError(f"mask_correlation {rho} is not attainable at validity {validity}")
    return brentq(gap, lo, hi, xtol=1e-10)


def mask_union_probability(config, products):
    """Probability that at least one of two products is valid at a pixel, under the mask model."""
    a, b = products
    va, vb = config.products[a].validity, config.products[b].validity
    r = _latent_correlation(np.mean([d.validity for d in config.products.values()]), config.mask_correlation)
    both_invalid = multivariate_normal.cdf([-norm.ppf(va), -norm.ppf(vb)], cov=[[1, r], [r, 1]])
    return 1.0 - both_invalid


def _qa_codes(z, fidelity):
    """QA from a standardized error field: 3 inside the central ``fidelity`` mass, then 2, 1, 0."""
    u = 2 * norm.cdf(np.abs(z)) - 1  # P(|Z| < |z|)
    rest = np.clip((u - fidelity) / max(1 - fidelity, 1e-12), 0, 1)
    qa = np.where(u < fidelity, 3, 2 - np.minimum((rest * 3).astype(np.int64), 2))
    return qa.astype(np.int8)


class _MetField:
    """Smooth analytic field: daily level plus planar trend plus two waves."""

    def __init__(self, rng, center, extent):
        self.center = center
        self.extent = extent
        self.level = rng.standard_normal()
        self.trend = rng.standard_normal(2) * 0.5
        self.waves = [(rng.standard_normal(2) * 2.5, rng.uniform(0, 2 * np.pi), rng.standard_normal() * 0.4)
                      for _ in range(2)]

    def __call__(self, east, north):
        x = (np.asarray(east) - self.center[0]) / self.extent
        y = (np.asarray(north) - self.center[1]) / self.extent
        spatial = self.trend[0] * x + self.trend[1] * y
        for k, phase, amp in self.waves:
            spatial = spatial + amp * np.sin(k[0] * x + k[1] * y + phase)
        return spatial


def met_values(fields, name, east, north, doy, noise=1.0):
    base, spatial_amp, daily_amp = _MET_SPEC[name]
    f = fields[name]
    seasonal = math.cos(2 * math.pi * (doy - 15) / 365.0)
    value = base + daily_amp * f.level + spatial_amp * noise * f(east, north)
    if name == "t":
        value = value - 8.0 * seasonal
    if name == "blh":
        # log-normal: day, space and season act multiplicatively, no hard floor
        value = base * np.exp(0.3 * f.level + 0.25 * noise * f(east, north) - 0.25 * seasonal)
    if name == "rh":
        value = np.clip(value, 5.0, 90.0)
    if name in ("ws", "lai_hv", "lai_lv"):
        value = np.maximum(value, 0.05)
    if name == "wd":
        value = np.clip(value, 0.05, 2 * math.pi - 0.05)
    return value


def pm25_truth(config, aod, met):
    """Noise-free PM2.5 from true AOD and met values (arrays or scalars)."""
    aod_norm = aod / np.maximum(met["blh"], 50.0)
    return (
        config.pm_offset
        + config.pm_aod * aod_norm
        + config.pm_rh * met["rh"]
        + config.pm_t * (met["t"] - 273.15)
        + config.pm_interaction * aod * met["rh"]
        + config.pm_nonlinear * (1000.0 * aod_norm) ** 2
    )


@dataclass
class Scene:
    config: SceneConfig
    true_aod: np.ndarray
    grids: list
    met: list
    stations: list
    truth: list
    product_masks: dict


def generate_scene(config):
    """Pure function of ``config``: true fields, product grids, met and stations."""
    geom = config.geometry
    shape = geom.shape
    dates = config.dates
    root = np.random.SeedSequence(config.seed)
    (station_ss, truth_ss, met_ss, target_ss, mask_ss, *product_ss) = root.spawn(5 + len(PRODUCTS))
    extent = max(geom.nrows, geom.ncols) * geom.cellsize
    center = (geom.origin_east + geom.ncols * geom.cellsize / 2, geom.origin_north + geom.nrows * geom.cellsize / 2)

    rng = np.random.default_rng(station_ss)
    width, height = geom.ncols * geom.cellsize, geom.nrows * geom.cellsize
    st_east = geom.origin_east + width * rng.uniform(0.05, 0.95, config.n_stations)
    st_north = geom.origin_north + height * rng.uniform(0.05, 0.95, config.n_stations)
    st_cells = [geom.cell_index(e, n) for e, n in zip(st_east, st_north)]
    reports = rng.uniform(size=(config.n_days, config.n_stations)) < config.report_rate

    rng = np.random.default_rng(truth_ss)
    true_aod = np.empty((config.n_days,) + shape, dtype=np.float32)
    for d in range(config.n_days):
        level = rng.standard_normal()
        f = smooth_field(rng, shape, config.aod_corr_length, geom.cellsize)
        true_aod[d] = np.maximum(config.aod_mean + config.aod_sd * (0.6 * level + 0.8 * f), 0.02)

    # met: analytic fields sampled on a coarse lattice
    rng = np.random.default_rng(met_ss)
    lat_e = np.arange(geom.origin_east, geom.origin_east + width + 1e-6, config.met_spacing)
    lat_n = np.arange(geom.origin_north, geom.origin_north + height + 1e-6, config.met_spacing)
    lat_e, lat_n = (a.ravel() for a in np.meshgrid(lat_e, lat_n))
    met_records, station_met = [], []
    for d, date in enumerate(dates):
        doy = date.timetuple().tm_yday
        fields = {name: _MetField(rng, center, extent) for name in _MET_SPEC}
        lattice = {name: met_values(fields, name, lat_e, lat_n, doy, config.met_noise) for name in _MET_SPEC}
        lattice["dpt"] = lattice["t"] - (100.0 - lattice["rh"]) / 5.0
        for i in range(len(lat_e)):
            met_records.append(MetRecord(east=float(lat_e[i]), north=float(lat_n[i]), date=date,
                                         **{k: float(v[i]) for k, v in lattice.items()}))
        station_met.append({name: met_values(fields, name, st_east, st_north, doy, config.met_noise)
                            for name in _MET_SPEC})

    # stations: truth and raw (dry-mass) measurement
    rng = np.random.default_rng(target_ss)
    stations, truth = [], []
    for d, date in enumerate(dates):
        met = station_met[d]
        aod = np.array([true_aod[d][rc] for rc in st_cells], dtype=np.float64)
        pm = pm25_truth(config, aod, met) + config.pm_noise_sd * rng.standard_normal(config.n_stations)
        pm = np.maximum(pm, 1.0)
        for s in range(config.n_stations):
            if not reports[d, s]:
                continue
            sid = f"S{s + 1:02d}"
            rh = float(met["rh"][s])
            raw = float(pm[s]) * (1 - min(rh, RH_MAX) / 100)
            stations.append(StationRecord(sid, float(st_east[s]), float(st_north[s]), date, raw))
            truth.append({"station_id": sid, "date": date, "pm25": float(pm[s]), "rh": rh,
                          "t": float(met["t"][s]), "blh": float(met["blh"][s]), "aod": float(aod[s])})

    grids, masks = _product_grids(config, true_aod, mask_ss, product_ss)
    return Scene(config, true_aod, grids, met_records, stations, truth, masks)


def _product_grids(config, true_aod, mask_ss, product_ss):
    geom = config.geometry
    shape = geom.shape
    products = list(config.products)
    n_latent = len(products)
    mean_validity = float(np.mean([config.products[p].validity for p in products]))
    r = _latent_correlation(mean_validity, config.mask_correlation) if n_latent > 1 else 0.0
    corr = np.full((n_latent, n_latent), r)
    np.fill_diagonal(corr, 1.0)
    try:
        chol = np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        raise ConfigError(f"mask_correlation {config.mask_correlation} is not attainable for {n_latent} products") from None

    mask_rng = np.random.default_rng(mask_ss)
    rngs = {p: np.random.default_rng(product_ss[_PRODUCT_SLOT[p]]) for p in products}
    grids = []
    masks = {p: np.zeros((config.n_days,) + shape, dtype=bool) for p in products}
    cut_lo, cut_hi = int(0.4 * geom.ncols), int(0.6 * geom.ncols)
    for d, date in enumerate(config.dates):
        base = np.stack([smooth_field(mask_rng, shape, config.mask_corr_length, geom.cellsize) for _ in products])
        latent = np.tensordot(chol, base, axes=1)
        for j, p in enumerate(products):
            deg = config.products[p]
            rng = rngs[p]
            valid = latent[j] < norm.ppf(deg.validity) if deg.validity < 1 else np.ones(shape, dtype=bool)
            masks[p][d] = valid
            z = smooth_field(rng, shape, config.noise_corr_length, geom.cellsize)
            value = np.maximum(true_aod[d].astype(np.float64) + deg.bias + deg.noise_sd * z, 0.0)
            qa = _qa_codes(z, deg.qa_fidelity)
            algorithm = Algorithm(p[1:])
            if p[0] == "V":
                platforms = [(Sensor.VIIRS_SNPP, valid, value)]
            else:
                u = rng.uniform(size=shape)
                half = (1 - config.modis_overlap) / 2
                aqua_valid = valid & (u < config.modis_overlap + half)
                terra_valid = valid & ((u < config.modis_overlap) | (u >= config.modis_overlap + half))
                platforms = []
                for sensor, pv in ((Sensor.MODIS_AQUA, aqua_valid), (Sensor.MODIS_TERRA, terra_valid)):
                    jitter = config.platform_noise_sd * smooth_field(rng, shape, config.noise_corr_length, geom.cellsize)
                    platforms.append((sensor, pv, np.maximum(value + jitter, 0.0)))
            for sensor, pv, pvalue in platforms:
                vals = np.where(pv, pvalue, -9999.0).astype(np.float32)
                pqa = np.where(pv, qa, 0)
                if config.n_swaths == 1:
                    grids.append(AODGrid(geom, vals, pqa, sensor, algorithm, date))
                    continue
                for lo, hi in ((0, cut_hi), (cut_lo, geom.ncols)):
                    sv = np.full(shape, -9999.0, dtype=np.float32)
                    sq = np.zeros(shape, dtype=np.int8)
                    sv[:, lo:hi] = vals[:, lo:hi]
                    sq[:, lo:hi] = pqa[:, lo:hi]
                    grids.append(AODGrid(geom, sv, sq, sensor, algorithm, date))
    return grids, masks


def grid_filename(grid, swath=None):
    suffix = "" if swath is None else f"_s{swath}"
    return f"{grid.stream}_{grid.date.isoformat()}{suffix}.agf"


def write_scene(scene, out_dir):
    """Write grids, tables, truth and the scene config under ``out_dir``."""
    out = Path(out_dir)
    (out / "grids").mkdir(parents=True, exist_ok=True)
    (out / "truth").mkdir(parents=True, exist_ok=True)
    counts = {}
    for grid in scene.grids:
        key = (grid.stream, grid.date)
        counts[key] = counts.get(key, 0) + 1
        swath = counts[key] if scene.config.n_swaths > 1 else None
        write_grid(grid, out / "grids" / grid_filename(grid, swath))
    write_station_table(scene.stations, out / "stations.csv")
    write_met_table(scene.met, out / "met.csv")
    (out / "scene.cfg").write_text(format_kv(scene.config.to_mapping()), encoding="utf-8")
    lines = ["station_id,date,pm25,rh,t,blh,aod"]
    for row in scene.truth:
        lines.append(",".join([row["station_id"], row["date"].isoformat()]
                              + [repr(row[k]) for k in ("pm25", "rh", "t", "blh", "aod")]))
    (out / "truth" / "stations_truth.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for d, date in enumerate(scene.config.dates):
        write_agf(out / "truth" / f"aod_{date.isoformat()}.agf", scene.config.geometry, scene.true_aod[d],
                  extra={"quantity": "aod_true", "date": date.isoformat()})
    return out
