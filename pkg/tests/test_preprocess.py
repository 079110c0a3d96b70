import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from aeromix.exceptions import DegenerateInputError, InsufficientDataError, PipelineError, ValidationError
from aeromix.gridio import AODGrid, Algorithm, GridGeometry, MetRecord, Sensor, StationRecord
from aeromix.preprocess import (
    FEATURE_NAMES,
    CrossFillRegression,
    apply_cross_fill,
    build_training_matrix,
    correct_pm25,
    corrected_stations,
    daily_average,
    daily_average_arrays,
    day_of_year,
    extract_window,
    fit_cross_fill,
    normalize_aod,
    window_statistics,
)

DAY = dt.date(2013, 2, 1)
NODATA = np.float32(-9999.0)


def grid_of(values, qa=None):
    values = np.asarray(values, dtype=np.float32)
    geom = GridGeometry(values.shape[0], values.shape[1], 0.0, 0.0, 10.0)
    qa = np.full(values.shape, 3) if qa is None else qa
    return AODGrid(geom, values, qa, Sensor.VIIRS_SNPP, Algorithm.DB, DAY)


def center_of(grid, r, c):
    g = grid.geometry
    return (g.origin_east + (c + 0.5) * g.cellsize, g.origin_north + (g.nrows - r - 0.5) * g.cellsize)


# --------------------------------------------------------------------------
# windows

def test_constant_window():
    grid = grid_of(np.full((3, 3), 0.3))
    s = extract_window(grid, center_of(grid, 1, 1))
    assert s.mean_aod == pytest.approx(float(np.float32(0.3)), abs=1e-12)
    assert s.std_aod == 0.0 and s.weight == 1.0 and s.valid and s.n_valid == 9


def test_noisy_window_rejected():
    vals = np.array([[0.10, 0.50, 0.10], [0.50, 0.10, 0.50], [0.10, 0.50, 0.10]])
    grid = grid_of(vals)
    s = extract_window(grid, center_of(grid, 1, 1))
    assert s.std_aod > 0.02 and not s.valid


def test_nodata_window():
    grid = grid_of(np.full((3, 3), NODATA))
    s = extract_window(grid, center_of(grid, 1, 1))
    assert s.n_valid == 0 and not s.valid


def test_edge_window_keeps_denominator_nine():
    grid = grid_of(np.full((3, 3), 0.2))
    s = extract_window(grid, center_of(grid, 0, 0))
    assert s.n_valid == 4 and s.weight == pytest.approx(4 / 9)


def test_window_outside_grid():
    grid = grid_of(np.full((3, 3), 0.2))
    with pytest.raises(ValueError):
        extract_window(grid, (-5.0, 5.0))


def brute_window(values, valid, qa, r, c, threshold):
    pix, best = [], 0
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            rr, cc = r + dr, c + dc
            if 0 <= rr < values.shape[0] and 0 <= cc < values.shape[1]:
                if valid[rr, cc]:
                    pix.append(float(values[rr, cc]))
                    best += qa[rr, cc] == 3
    if not pix:
        return None, None, 0, best / 9, False
    mean = sum(pix) / len(pix)
    std = math.sqrt(sum((p - mean) ** 2 for p in pix) / len(pix))
    return mean, std, len(pix), best / 9, std <= threshold


@given(
    hnp.arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 5)),
               elements=st.one_of(st.floats(0, 1, width=32), st.just(NODATA))),
    st.data(),
)
def test_window_statistics_match_brute_force(values, data):
    qa = data.draw(hnp.arrays(np.int8, values.shape, elements=st.integers(0, 3)))
    grid = grid_of(values, qa)
    stats = window_statistics(grid.values, grid.valid, grid.qa, 0.02)
    for r in range(values.shape[0]):
        for c in range(values.shape[1]):
            mean, std, n, weight, valid = brute_window(values, grid.valid, qa, r, c, 0.02)
            assert stats["n_valid"][r, c] == n
            assert stats["weight"][r, c] * 9 == round(weight * 9)
            assert bool(stats["valid"][r, c]) == valid
            if n:
                assert stats["mean"][r, c] == pytest.approx(mean, abs=1e-12)
                assert stats["std"][r, c] == pytest.approx(std, abs=1e-12)
            sample = extract_window(grid, center_of(grid, r, c))
            # the scalar and grid-wide paths share one kernel
            assert sample.n_valid == n and sample.valid == valid
            assert sample.weight == stats["weight"][r, c]
            if n:
                assert sample.mean_aod == stats["mean"][r, c]
                assert sample.std_aod == stats["std"][r, c]


# --------------------------------------------------------------------------
# cross fill and daily average

def test_cross_fill_closed_form():
    reg = fit_cross_fill({1: 0.1, 2: 0.2, 3: 0.3}, {1: 0.2, 2: 0.4, 3: 0.6}, min_pairs=3)
    assert reg.slope == pytest.approx(2.0, abs=1e-12)
    assert reg.intercept == pytest.approx(0.0, abs=1e-12)
    assert reg.r == pytest.approx(1.0, abs=1e-12)
    assert reg.n_pairs == 3


def test_cross_fill_errors():
    with pytest.raises(DegenerateInputError):
        fit_cross_fill({i: 0.3 for i in range(40)}, {i: 0.01 * i for i in range(40)})
    with pytest.raises(InsufficientDataError):
        fit_cross_fill({1: 0.1, 2: 0.2}, {1: 0.2, 2: 0.3}, min_pairs=30)


def test_cross_fill_ignores_missing_entries():
    a = {i: 0.01 * i for i in range(35)}
    b = {i: 0.02 * i + 0.1 for i in range(35)}
    a[100], b[101] = 0.5, 0.5
    a[3] = None
    b[4] = float("nan")
    reg = fit_cross_fill(a, b)
    assert reg.n_pairs == 33


@given(st.lists(st.floats(0.0, 2.0), min_size=30, max_size=60, unique=True),
       st.floats(-3, 3), st.floats(-1, 1))
def test_cross_fill_collinear_is_exact(xs, slope, intercept):
    assume(np.ptp(xs) > 1e-3)
    reg = fit_cross_fill(dict(enumerate(xs)), {i: slope * x + intercept for i, x in enumerate(xs)})
    assert reg.slope == pytest.approx(slope, abs=1e-9)
    resid = [slope * x + intercept - (reg.slope * x + reg.intercept) for x in xs]
    assert max(abs(e) for e in resid) < 1e-10
    if abs(slope) > 1e-6:
        assert abs(abs(reg.r) - 1) < 1e-10


def test_apply_cross_fill_examples():
    assert apply_cross_fill(CrossFillRegression(2.0, 0.0, 30, 1.0), 0.25) == 0.5
    assert apply_cross_fill(CrossFillRegression(1.0, 0.0, 30, 1.0), 0.37) == 0.37
    assert apply_cross_fill(CrossFillRegression(1.0, -0.3, 30, 1.0), 0.1) == 0.0


def test_daily_average_examples():
    assert daily_average(0.4, 0.6) == pytest.approx(0.5, abs=1e-12)
    assert daily_average(0.31, 0.31) == 0.31
    reg = CrossFillRegression(2.0, 0.0, 30, 1.0)
    assert daily_average(0.25, None, reg_a2t=reg) == pytest.approx(0.375, abs=1e-12)
    assert daily_average(0.25, None) is None
    assert daily_average(None, None, reg, reg) is None


@given(st.one_of(st.none(), st.floats(0, 3)), st.one_of(st.none(), st.floats(0, 3)),
       st.floats(-2, 2), st.floats(-1, 1))
def test_daily_average_bounds_and_array_agreement(a, t, slope, intercept):
    reg = CrossFillRegression(slope, intercept, 30, 0.5)
    v = daily_average(a, t, reg, reg)
    filled_a = a if a is not None else (apply_cross_fill(reg, t) if t is not None else None)
    filled_t = t if t is not None else (apply_cross_fill(reg, a) if a is not None else None)
    if filled_a is None or filled_t is None:
        assert v is None
    else:
        assert min(filled_a, filled_t) - 1e-12 <= v <= max(filled_a, filled_t) + 1e-12
    arr, ok = daily_average_arrays(np.array([a if a is not None else np.nan]), np.array([a is not None]),
                                   np.array([t if t is not None else np.nan]), np.array([t is not None]), reg, reg)
    assert bool(ok[0]) == (v is not None)
    if v is not None:
        assert arr[0] == pytest.approx(v, abs=1e-15)


# --------------------------------------------------------------------------
# scalar corrections

def test_correct_pm25_examples():
    assert correct_pm25(30, 0) == 30
    assert correct_pm25(50, 50) == pytest.approx(100.0, abs=1e-12)
    assert correct_pm25(40, 100) == pytest.approx(4000.0, rel=1e-12)
    with pytest.raises(ValidationError):
        correct_pm25(-1, 20)
    with pytest.raises(ValidationError):
        correct_pm25(10, 101)


@given(st.floats(0.1, 500), st.floats(0, 99), st.floats(0, 99))
def test_correct_pm25_monotone(pm, rh1, rh2):
    lo, hi = sorted((rh1, rh2))
    assert correct_pm25(pm, lo) <= correct_pm25(pm, hi)
    if hi - lo > 1e-9:  # below that, rounding can tie
        assert correct_pm25(pm, lo) < correct_pm25(pm, hi)
    assert correct_pm25(pm, lo) >= pm


def test_normalize_aod_examples():
    assert normalize_aod(0.5, 1000) == pytest.approx(5.0e-4, abs=1e-15)
    assert normalize_aod(0.0, 731.0) == 0.0
    assert normalize_aod(0.5, 10) == pytest.approx(0.01, abs=1e-15)


def test_day_of_year():
    assert day_of_year(dt.date(2013, 2, 1)) == 32
    assert day_of_year(dt.date(2016, 12, 31)) == 366


# --------------------------------------------------------------------------
# training matrix

def _met_at(east, north, date):
    return MetRecord(east, north, date, 270.0, 280.0, 800.0, 86000.0, 1.0, 1.1, 2.0, 1.0, 1e7, 4e5, 40.0)


def _stations(n_stations, dates):
    out = []
    for d in dates:
        for s in range(n_stations):
            out.append(StationRecord(f"S{s}", 100.0 * s, 50.0, d, 20.0 + s))
    return out


def test_build_training_matrix_full_and_drop():
    dates = [DAY, DAY + dt.timedelta(days=1)]
    raw = _stations(3, dates)
    stations = corrected_stations(raw, {r.key: 40.0 for r in raw})
    met = {r.key: _met_at(r.east, r.north, r.date) for r in raw}
    aod = {r.key: 0.4 / 800 for r in raw}
    m, dropped = build_training_matrix(aod, stations, met)
    assert len(m) == 6 and dropped == 0
    assert m.feature_names == FEATURE_NAMES
    assert m.X[0, FEATURE_NAMES.index("DOY")] == 32
    assert m.y[0] == pytest.approx(20.0 / 0.6)
    assert m.keys == sorted(m.keys, key=lambda k: (k[1], k[0]))
    del aod[("S1", DAY)]
    m, dropped = build_training_matrix(aod, stations, met)
    assert len(m) == 5 and dropped == 1


def test_build_training_matrix_empty_reports_diagnostics():
    raw = _stations(2, [DAY])
    stations = corrected_stations(raw, {r.key: 40.0 for r in raw})
    with pytest.raises(PipelineError, match="missing AOD 2"):
        build_training_matrix({}, stations, {})


def test_corrected_stations_drops_missing_humidity():
    raw = _stations(2, [DAY])
    out = corrected_stations(raw, {raw[0].key: 50.0})
    assert len(out) == 1 and out[0].pm25_corrected == pytest.approx(2 * raw[0].pm25_raw)
