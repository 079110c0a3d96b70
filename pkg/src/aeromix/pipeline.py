"""The pipeline commands: each reads a :class:`PipelineConfig`, writes its
outputs under ``config.out_dir`` and finishes with a run manifest.

Output files
------------
preprocess
    ``matrix_<product>.csv``, ``crossfill.csv``, ``preprocess_summary.txt``
fuse-data
    ``matrix_fused.csv``, ``model_fused.txt``, ``data_level_report.csv``,
    ``data_level_report.txt``, ``cv_data_<name>.csv``, ``test_keys_data.csv``
fuse-decision
    ``scenario_reports.csv``, ``scenario_reports.txt``,
    ``model_scenario<id>.txt``, ``cv_scenario<id>_<product>.csv``,
    ``test_keys_scenario<id>.csv``
map
    ``pm25_<date>.agf``, ``pm25_<date>.ppm`` (or ``.pgm``) with its world
    file and render log, ``quasi_stations_<date>.csv``
eval
    ``model_selection.csv``, ``model_selection.txt``
synth
    the scene layout of :func:`aeromix.synth.write_scene`

Every command also writes ``manifest_<command>.json``.
"""

import csv
import hashlib
import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path

import joblib
import numpy as np
import scipy
import sklearn

from . import __version__
from .dataset import Dataset, Settings
from .exceptions import InsufficientDataError, PipelineError
from .fusion import (
    SCENARIOS,
    dumps_fusion_model,
    format_reports,
    run_data_level,
    run_scenario,
    write_reports_csv,
)
from .mapgen import generate_quasi_stations, idw_interpolate, render_map, write_map, write_quasi_stations
from .mlcore.matrix import write_matrix
from .mlcore.metrics import compute_metrics
from .mlcore.selection import DEFAULT_GRIDS, kfold_cv, make_estimator, train_test_split, write_cv_table
from .mlcore.serialize import dumps_model
from .synth import write_scene, generate_scene

log = logging.getLogger(__name__)

MODEL_KINDS = ("gbt", "rf", "linear")


@dataclass
class CommandResult:
    command: str
    out_dir: Path
    outputs: dict
    payload: object = None


def _sha256(path):
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _versions():
    return {
        "aeromix": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "joblib": joblib.__version__,
    }


def _input_hashes(data_dir):
    data_dir = Path(data_dir)
    files = sorted(p for p in data_dir.rglob("*") if p.is_file() and p.suffix in (".agf", ".csv"))
    return {p.relative_to(data_dir).as_posix(): _sha256(p) for p in files}


def write_manifest(out_dir, command, config_mapping, config_digest, seed, outputs, inputs=None):
    """``manifest_<command>.json`` with everything needed to repeat the run."""
    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "config": config_mapping,
        "config_sha256": config_digest,
        "seed": seed,
        "versions": _versions(),
        "inputs": inputs or {},
        "outputs": {name: _sha256(out_dir / name) for name in sorted(outputs)},
    }
    path = out_dir / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _finish(config, command, outputs, payload=None):
    write_manifest(config.out_dir, command, config.to_mapping(), config.digest(), config.seed, outputs,
                   _input_hashes(config.data_dir))
    return CommandResult(command, Path(config.out_dir), outputs, payload)


def load_dataset(config):
    settings = Settings(config.std_threshold, config.rh_max, config.blh_min, config.min_pairs)
    return Dataset.from_directory(config.data_dir, settings)


def param_grid(config, estimator=None):
    estimator = estimator or config.estimator
    return config.grid if estimator == "gbt" else DEFAULT_GRIDS[estimator]


def _out(config):
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_keys(keys, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("station_id", "date"))
        for station, date in keys:
            writer.writerow((station, date.isoformat()))


# --------------------------------------------------------------------------

def cmd_preprocess(config, dataset=None):
    dataset = dataset or load_dataset(config)
    out = _out(config)
    outputs = []
    for p in config.products:
        if p not in dataset.matrices:
            log.warning("product %s has no samples", p)
            continue
        name = f"matrix_{p}.csv"
        write_matrix(dataset.matrices[p], out / name)
        outputs.append(name)
    with (out / "crossfill.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("algorithm", "direction", "slope", "intercept", "r", "n_pairs"))
        for alg, regs in sorted(dataset.crossfill.items()):
            for direction, reg in zip(("aqua_to_terra", "terra_to_aqua"), regs):
                if reg is None:
                    writer.writerow((alg, direction, "", "", "", 0))
                else:
                    writer.writerow((alg, direction, repr(reg.slope), repr(reg.intercept), repr(reg.r), reg.n_pairs))
    outputs.append("crossfill.csv")
    lines = [f"days {len(dataset.dates)}", f"streams {','.join(dataset.streams)}",
             f"station_days {len(dataset.stations)}", f"station_days_outside_grid {dataset.n_outside}"]
    for p in dataset.matrices:
        cov = 100.0 * float(np.mean(dataset.cell_valid[p]))
        lines.append(f"{p} rows {len(dataset.matrices[p])} dropped {dataset.n_dropped[p]} coverage {cov:.4f}")
    (out / "preprocess_summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    outputs.append("preprocess_summary.txt")
    return _finish(config, "preprocess", outputs, dataset)


def cmd_fuse_data(config, dataset=None):
    dataset = dataset or load_dataset(config)
    out = _out(config)
    streams = config.data_level_streams or None
    products = tuple(p for p in config.products if p in dataset.matrices)
    report = run_data_level(dataset, streams, products, config.seed, param_grid(config), config.cv_folds,
                            config.split_ratio, config.estimator, config.threads)
    fused_matrix, _ = dataset.fused_data_level(streams)
    outputs = ["matrix_fused.csv", "model_fused.txt", "data_level_report.csv", "data_level_report.txt",
               "test_keys_data.csv"]
    write_matrix(fused_matrix, out / "matrix_fused.csv")
    (out / "model_fused.txt").write_text(dumps_model(report.model), encoding="utf-8")
    write_reports_csv([report], out / "data_level_report.csv")
    (out / "data_level_report.txt").write_text(format_reports([report]) + "\n", encoding="utf-8")
    _write_keys(report.eval_keys["fused"], out / "test_keys_data.csv")
    for name, table in report.cv_tables.items():
        write_cv_table(table, out / f"cv_data_{name}.csv")
        outputs.append(f"cv_data_{name}.csv")
    return _finish(config, "fuse-data", outputs, report)


def _check_scenarios(ids, dataset):
    for sid in ids:
        if sid not in SCENARIOS:
            raise PipelineError(f"unknown scenario {sid}; valid ids are 1..{len(SCENARIOS)}")
        missing = [p for p in SCENARIOS[sid].products if p not in dataset.matrices]
        if missing:
            raise PipelineError(f"scenario {sid} needs product(s) {', '.join(missing)} which have no samples")


def cmd_fuse_decision(config, scenarios=None, dataset=None):
    dataset = dataset or load_dataset(config)
    ids = tuple(config.scenarios if scenarios is None else scenarios)
    _check_scenarios(ids, dataset)
    out = _out(config)
    reports, outputs = [], ["scenario_reports.csv", "scenario_reports.txt"]
    for sid in ids:
        log.info("scenario %d", sid)
        report = run_scenario(SCENARIOS[sid], dataset, config.seed, param_grid(config), config.cv_folds,
                              config.split_ratio, config.estimator, config.threads)
        reports.append(report)
        name = f"model_scenario{sid}.txt"
        (out / name).write_text(dumps_fusion_model(report.model), encoding="utf-8")
        outputs.append(name)
        for p, table in report.cv_tables.items():
            write_cv_table(table, out / f"cv_scenario{sid}_{p}.csv")
            outputs.append(f"cv_scenario{sid}_{p}.csv")
        _write_keys(report.eval_keys["fused"], out / f"test_keys_scenario{sid}.csv")
        outputs.append(f"test_keys_scenario{sid}.csv")
    write_reports_csv(reports, out / "scenario_reports.csv")
    (out / "scenario_reports.txt").write_text(format_reports(reports) + "\n", encoding="utf-8")
    return _finish(config, "fuse-decision", outputs, reports)


def cmd_map(config, date=None, dataset=None):
    dataset = dataset or load_dataset(config)
    date = date or config.map_date or dataset.dates[0]
    if date not in dataset.dates:
        raise PipelineError(f"no AOD grids for {date}")
    sid = config.map_scenario
    _check_scenarios((sid,), dataset)
    out = _out(config)
    report = run_scenario(SCENARIOS[sid], dataset, config.seed, param_grid(config), config.cv_folds,
                          config.split_ratio, config.estimator, config.threads)
    i = dataset.dates.index(date)
    products = SCENARIOS[sid].products
    met = dataset.met_at_cells(date)
    quasi = generate_quasi_stations(
        report.model,
        {p: dataset.product_values[p][i] for p in products},
        {p: dataset.cell_valid[p][i] for p in products},
        met, dataset.geometry, date, config.quasi_stride, f"scenario{sid}", config.blh_min,
    )
    ground = [s for s in dataset.stations if s.date == date]
    points = [(s.east, s.north) for s in ground] + [(q.east, q.north) for q in quasi]
    values = [s.pm25_corrected for s in ground] + [q.pm25 for q in quasi]
    if not points:
        raise InsufficientDataError(f"no ground or quasi-stations on {date}")
    pm_map = idw_interpolate(points, values, dataset.geometry, config.idw_power, date, len(ground), len(quasi))
    stem = f"pm25_{date.isoformat()}"
    ext = ".pgm" if config.palette == "gray" else ".ppm"
    write_map(pm_map, out / f"{stem}.agf")
    rendered = render_map(pm_map, out / f"{stem}{ext}", config.palette, config.palette_min, config.palette_max)
    write_quasi_stations(quasi, out / f"quasi_stations_{date.isoformat()}.csv")
    outputs = [f"{stem}.agf", rendered.image.name, rendered.world_file.name, rendered.log.name,
               f"quasi_stations_{date.isoformat()}.csv"]
    return _finish(config, "map", outputs, pm_map)


def cmd_eval(config, dataset=None):
    """Compare the boosted trees with a random forest and a linear model per product."""
    dataset = dataset or load_dataset(config)
    out = _out(config)
    rows = []
    for p in config.products:
        if p not in dataset.matrices:
            continue
        train, test = train_test_split(dataset.matrices[p], config.split_ratio, config.seed)
        for kind in MODEL_KINDS:
            best, _ = kfold_cv(train, param_grid(config, kind), config.cv_folds, config.seed, kind, config.threads)
            model = make_estimator(kind, best, config.seed).fit(train.X, train.y)
            m = compute_metrics(test.y, model.predict(test.X))
            rows.append((p, kind, m, best))
    with (out / "model_selection.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("product", "model", "r2", "rmse", "mae", "n_test", "params"))
        for p, kind, m, best in rows:
            writer.writerow((p, kind, repr(m.r2), repr(m.rmse), repr(m.mae), m.n, json.dumps(best, sort_keys=True)))
    lines = [f"{'Product':<9}{'Model':<8}{'R2':>8}{'RMSE':>10}{'MAE':>10}{'n_test':>8}"]
    lines += [f"{p:<9}{kind:<8}{m.r2:>8.4f}{m.rmse:>10.4f}{m.mae:>10.4f}{m.n:>8}" for p, kind, m, _ in rows]
    (out / "model_selection.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return _finish(config, "eval", ["model_selection.csv", "model_selection.txt"], rows)


def cmd_synth(scene_config, out_dir):
    """Generate a scene and write it under ``out_dir``."""
    out_dir = Path(out_dir)
    scene = generate_scene(scene_config)
    write_scene(scene, out_dir)
    outputs = sorted(p.relative_to(out_dir).as_posix() for p in out_dir.rglob("*")
                     if p.is_file() and not p.name.startswith("manifest_"))
    mapping = scene_config.to_mapping()
    digest = hashlib.sha256(json.dumps(mapping, sort_keys=True).encode()).hexdigest()
    write_manifest(out_dir, "synth", mapping, digest, scene_config.seed, outputs)
    return CommandResult("synth", out_dir, outputs, scene)
