"""Data-level and decision-level fusion of AOD products.

Data level: window AODs of the retrieval streams are averaged with weights
equal to the share of best-quality (QA 3) pixels in each window.

Decision level: one boosted-tree model per daily product turns that
product's AOD plus meteorology into a PM2.5 estimate (a "decision"); a
linear combiner fitted by least squares merges the decisions.  Combiners are
also fitted for every proper subset of the scenario's products so that a
location where only some products are valid still gets an estimate.
"""

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import InsufficientDataError, TableFormatError, ValidationError
from .gridio import PRODUCTS
from .mlcore.linear import LinearRegression
from .mlcore.metrics import compute_metrics
from .mlcore.selection import fold_assignment, kfold_cv, make_estimator, split_indices
from .mlcore.serialize import _Reader, model_lines, read_model


@dataclass(frozen=True)
class FusionScenario:
    id: int
    products: tuple

    def __post_init__(self):
        products = tuple(p for p in PRODUCTS if p in set(self.products))
        if not products or len(products) != len(self.products):
            raise ValidationError(f"scenario products must be a nonempty subset of {PRODUCTS}")
        object.__setattr__(self, "products", products)

    @property
    def label(self):
        return "+".join(self.products)


# Product sets of the eleven canonical decision-level scenarios.
SCENARIOS = {
    s.id: s
    for s in (
        FusionScenario(1, ("MDB", "VDB")),
        FusionScenario(2, ("MDB", "MDT", "VDB")),
        FusionScenario(3, ("MDB", "VDB", "VDT")),
        FusionScenario(4, ("MDB", "MDT", "VDB", "VDT")),
        FusionScenario(5, ("MDT", "VDT")),
        FusionScenario(6, ("MDB", "MDT", "VDT")),
        FusionScenario(7, ("MDT", "VDB", "VDT")),
        FusionScenario(8, ("MDB", "MDT")),
        FusionScenario(9, ("VDB", "VDT")),
        FusionScenario(10, ("MDB", "VDT")),
        FusionScenario(11, ("MDT", "VDB")),
    )
}


def key_order(key):
    station, date = key
    return (date, station)


# --------------------------------------------------------------------------
# data level

def quality_weight(qa_window):
    """Share of best-quality pixels in a 3x3 window; ``None`` entries count as not best."""
    codes = list(qa_window)
    if len(codes) > 9:
        raise ValidationError("a 3x3 window holds at most nine codes")
    return sum(1 for q in codes if q is not None and q == 3) / 9


def fuse_data_level(samples):
    """Quality-weighted mean AOD of valid window samples; ``None`` if no weight."""
    num = den = 0.0
    for s in samples:
        if s.valid and s.weight > 0:
            num += s.weight * s.mean_aod
            den += s.weight
    if den == 0:
        return None
    return num / den


def fuse_data_level_arrays(means, weights, valids):
    """Array version of :func:`fuse_data_level`; returns ``(fused, valid)``."""
    num = np.zeros(np.shape(means[0]))
    den = np.zeros_like(num)
    for mean, weight, valid in zip(means, weights, valids):
        use = valid & (weight > 0)
        num += np.where(use, weight * np.where(use, mean, 0.0), 0.0)
        den += np.where(use, weight, 0.0)
    covered = den > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        fused = np.where(covered, num / np.where(covered, den, 1.0), np.nan)
    return fused, covered


def coverage(valid):
    """Percentage of true entries in a validity mask or sequence."""
    valid = np.asarray(valid, dtype=bool)
    if valid.size == 0:
        raise ValidationError("coverage of an empty domain")
    return 100.0 * np.count_nonzero(valid) / valid.size


# --------------------------------------------------------------------------
# decision level

class StackingCombiner(RegressorMixin, BaseEstimator):
    """Linear decision maker ``sum_i A_i f_i + B`` fitted by least squares.

    Collinear decisions get the minimum-norm coefficients.  A single decision
    column is passed through unchanged (``A = 1, B = 0``) unless
    ``fit_single`` is set.
    """

    def __init__(self, fit_single=False):
        self.fit_single = fit_single

    def fit(self, D, y):
        D = check_array(D, dtype=np.float64)
        if D.shape[1] == 1 and not self.fit_single:
            self.coef_, self.intercept_ = np.ones(1), 0.0
        else:
            lin = LinearRegression().fit(D, y)
            self.coef_, self.intercept_ = lin.coef_, lin.intercept_
        self.n_features_in_ = D.shape[1]
        return self

    def predict(self, D):
        check_is_fitted(self)
        D = check_array(D, dtype=np.float64)
        return D @ self.coef_ + self.intercept_


@dataclass
class DecisionFusionModel:
    scenario: FusionScenario
    base_models: dict
    combiners: dict
    feature_names: tuple = ()

    def decisions(self, features):
        """Base-model estimates for each product in ``features`` (product -> 2-D array)."""
        return {p: self.base_models[p].predict(X) for p, X in features.items()}

    def combiner_for(self, available):
        """Combiner for the products in ``available``, falling back to subsets."""
        available = tuple(p for p in self.scenario.products if p in set(available))
        for size in range(len(available), 0, -1):
            for subset in itertools.combinations(available, size):
                if subset in self.combiners:
                    return subset, self.combiners[subset]
        return None, None

    def predict_available(self, decision_vectors):
        """Fused estimates from per-product decision arrays containing NaN where missing."""
        products = self.scenario.products
        n = len(next(iter(decision_vectors.values())))
        D = np.column_stack([
            np.asarray(decision_vectors[p], dtype=np.float64) if p in decision_vectors else np.full(n, np.nan)
            for p in products
        ])
        out = np.full(len(D), np.nan)
        present = ~np.isnan(D)
        patterns = {}
        for i, row in enumerate(present):
            patterns.setdefault(tuple(row), []).append(i)
        for pattern, rows in sorted(patterns.items()):
            avail = [p for p, ok in zip(products, pattern) if ok]
            subset, comb = self.combiner_for(avail)
            if comb is None:
                continue
            cols = [products.index(p) for p in subset]
            out[rows] = comb.predict(D[np.ix_(rows, cols)])
        return out


def apply_decision_fusion(model, decision_vector):
    """Fused PM2.5 from one decision per scenario product."""
    products = model.scenario.products
    missing = [p for p in products if p not in decision_vector]
    if missing:
        raise ValidationError(f"missing decision(s) for {', '.join(missing)}")
    comb = model.combiners[products]
    return float(sum(a * decision_vector[p] for a, p in zip(comb.coef_, products)) + comb.intercept_)


def _fit_base(estimator, params, seed, matrix):
    return make_estimator(estimator, params, seed).fit(matrix.X, matrix.y)


def _out_of_fold(estimator, params, seed, matrix, folds):
    """Predictions for every row of ``matrix`` from models that did not see it."""
    out = np.empty(len(matrix))
    for fold in range(folds.max() + 1):
        held = folds == fold
        model = make_estimator(estimator, params, seed).fit(matrix.X[~held], matrix.y[~held])
        out[held] = model.predict(matrix.X[held])
    return out


def train_decision_fusion(scenario, matrices, params=None, seed=0, estimator="gbt", train_keys=None, n_jobs=1,
                          stack_folds=5):
    """Fit the per-product base models and the stacking combiners.

    Parameters
    ----------
    scenario : FusionScenario
    matrices : dict
        product -> TrainingMatrix over every key where the product is valid.
    params : dict, optional
        Either one hyperparameter dict for all base models or product -> dict.
    train_keys : iterable, optional
        Restrict all fitting to these ``(station_id, date)`` keys.
    stack_folds : int
        Folds for the out-of-fold decisions the combiners are fitted on;
        ``0`` uses the in-sample decisions of the final base models.

    Base models see only keys where every scenario product is valid.  The
    combiner for a product subset is fitted on keys where that subset is
    valid.  Decisions on base-model training keys come from fold models
    that did not see the key, so the combiner weighs products by their
    out-of-sample skill rather than by how well they fit the training set.
    """
    products = scenario.products
    allowed = None if train_keys is None else set(train_keys)
    avail = {}
    for p in products:
        keys = set(matrices[p].keys)
        avail[p] = keys if allowed is None else keys & allowed
    co_valid = set.intersection(*(avail[p] for p in products))
    if not co_valid:
        raise InsufficientDataError(f"scenario {scenario.id}: no co-valid training keys")
    if params is None or not all(p in params for p in products):
        params = {p: params for p in products}
    base_sets = {p: matrices[p].restrict(co_valid) for p in products}
    bases = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_fit_base)(estimator, params[p], seed, base_sets[p]) for p in products
    )
    base_models = dict(zip(products, bases))

    oof = {}
    if stack_folds and len(co_valid) >= 2 * stack_folds:
        folds = fold_assignment(len(co_valid), stack_folds, seed)
        preds = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_out_of_fold)(estimator, params[p], seed, base_sets[p], folds) for p in products
        )
        oof = {p: dict(zip(base_sets[p].keys, pred)) for p, pred in zip(products, preds)}

    decisions, targets = {}, {}
    for p in products:
        m = matrices[p].restrict(avail[p])
        decisions[p] = dict(zip(m.keys, base_models[p].predict(m.X)))
        decisions[p].update(oof.get(p, {}))
        targets.update(zip(m.keys, m.y))
    combiners = {}
    for size in range(len(products), 0, -1):
        for subset in itertools.combinations(products, size):
            keys = sorted(set.intersection(*(avail[p] for p in subset)), key=key_order)
            if size > 1 and len(keys) < size + 1:
                continue
            D = np.array([[decisions[p][k] for p in subset] for k in keys]).reshape(len(keys), size)
            y = np.array([targets[k] for k in keys])
            combiners[subset] = StackingCombiner().fit(D, y)
    return DecisionFusionModel(scenario, base_models, combiners, matrices[products[0]].feature_names)


@dataclass
class ScenarioReport:
    scenario: FusionScenario
    product_metrics: dict
    fused_metrics: object
    product_coverage: dict
    fused_coverage: float
    n_train: int
    n_test: int
    eval_keys: dict = field(repr=False, default_factory=dict)
    best_params: dict = field(default_factory=dict)
    cv_tables: dict = field(repr=False, default_factory=dict)
    model: object = field(repr=False, default=None)


def _paired_test(matrices, keys):
    out = {}
    for p, m in matrices.items():
        idx = m.index()
        out[p] = m.take([idx[k] for k in keys])
    return out


def run_scenario(scenario, dataset, seed=0, param_grid=None, k=5, ratio=0.75, estimator="gbt", n_jobs=1):
    """Split, tune, train and evaluate one decision-level scenario.

    ``dataset`` supplies ``matrices`` (product -> TrainingMatrix) and
    ``cell_valid`` (product -> boolean coverage mask).
    """
    products = scenario.products
    matrices = {p: dataset.matrices[p] for p in products}
    co_valid = sorted(set.intersection(*(set(matrices[p].keys) for p in products)), key=key_order)
    train_idx, test_idx = split_indices(len(co_valid), ratio, seed)
    train_keys = [co_valid[i] for i in train_idx]
    test_keys = [co_valid[i] for i in test_idx]

    best, tables = {}, {}
    for p in products:
        best[p], tables[p] = kfold_cv(matrices[p].restrict(train_keys), param_grid, k, seed, estimator, n_jobs)
    fit_keys = set().union(*(matrices[p].keys for p in products)) - set(test_keys)
    model = train_decision_fusion(scenario, matrices, best, seed, estimator, fit_keys, n_jobs)

    test = _paired_test(matrices, test_keys)
    y_test = test[products[0]].y
    decisions = model.decisions({p: test[p].X for p in products})
    product_metrics = {p: compute_metrics(test[p].y, decisions[p]) for p in products}
    fused = model.combiners[products].predict(np.column_stack([decisions[p] for p in products]))
    eval_keys = {p: list(test[p].keys) for p in products}
    eval_keys["fused"] = list(test_keys)

    masks = {p: np.asarray(dataset.cell_valid[p], dtype=bool) for p in products}
    union = np.logical_or.reduce([masks[p] for p in products])
    return ScenarioReport(
        scenario=scenario,
        product_metrics=product_metrics,
        fused_metrics=compute_metrics(y_test, fused),
        product_coverage={p: coverage(masks[p]) for p in products},
        fused_coverage=coverage(union),
        n_train=len(train_keys),
        n_test=len(test_keys),
        eval_keys=eval_keys,
        best_params=best,
        cv_tables=tables,
        model=model,
    )


@dataclass
class DataLevelReport:
    streams: tuple
    product_metrics: dict
    fused_metrics: object
    product_coverage: dict
    fused_coverage: float
    n_train: int
    n_test: int
    eval_keys: dict = field(repr=False, default_factory=dict)
    best_params: dict = field(default_factory=dict)
    cv_tables: dict = field(repr=False, default_factory=dict)
    model: object = field(repr=False, default=None)


def run_data_level(dataset, streams=None, products=None, seed=0, param_grid=None, k=5, ratio=0.75,
                   estimator="gbt", n_jobs=1):
    """Quality-weighted data-level fusion compared with individual products.

    The fused-AOD model and one model per product are tuned and trained on
    the same keys and evaluated on the same test keys: those where the fused
    AOD and every compared product are valid.
    """
    fused_matrix, fused_mask = dataset.fused_data_level(streams)
    streams = tuple(dataset.streams if streams is None else streams)
    products = tuple(p for p in PRODUCTS if p in dataset.matrices) if products is None else tuple(products)
    matrices = {"fused": fused_matrix}
    matrices.update({p: dataset.matrices[p] for p in products})
    co_valid = sorted(set.intersection(*(set(m.keys) for m in matrices.values())), key=key_order)
    train_idx, test_idx = split_indices(len(co_valid), ratio, seed)
    train_keys = [co_valid[i] for i in train_idx]
    test_keys = [co_valid[i] for i in test_idx]
    test = _paired_test(matrices, test_keys)

    best, tables, metrics, models = {}, {}, {}, {}
    for name, m in matrices.items():
        train = m.restrict(train_keys)
        best[name], tables[name] = kfold_cv(train, param_grid, k, seed, estimator, n_jobs)
        models[name] = make_estimator(estimator, best[name], seed).fit(train.X, train.y)
        metrics[name] = compute_metrics(test[name].y, models[name].predict(test[name].X))
    return DataLevelReport(
        streams=streams,
        product_metrics={p: metrics[p] for p in products},
        fused_metrics=metrics["fused"],
        product_coverage={p: coverage(dataset.cell_valid[p]) for p in products},
        fused_coverage=coverage(fused_mask),
        n_train=len(train_keys),
        n_test=len(test_keys),
        eval_keys={name: list(t.keys) for name, t in test.items()},
        best_params=best,
        cv_tables=tables,
        model=models["fused"],
    )


# --------------------------------------------------------------------------
# reports and model bundles

def _fmt(x):
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.4f}"


def report_rows(report, scenario_id=""):
    """Flat rows (dicts) for one scenario or data-level report."""
    label = getattr(report, "scenario", None)
    rows = []
    entries = [(p, report.product_metrics[p], report.product_coverage[p]) for p in report.product_metrics]
    entries.append(("fused", report.fused_metrics, report.fused_coverage))
    for name, m, cov in entries:
        rows.append({
            "scenario": label.id if label is not None else scenario_id,
            "products": label.label if label is not None else "+".join(report.streams),
            "data": name,
            "r2": m.r2,
            "rmse": m.rmse,
            "mae": m.mae,
            "n_test": m.n,
            "coverage_percent": cov,
            "n_train": report.n_train,
        })
    return rows


REPORT_COLUMNS = ("scenario", "products", "data", "r2", "rmse", "mae", "n_test", "coverage_percent", "n_train")


def write_reports_csv(reports, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for report in reports:
            for row in report_rows(report, "data-level"):
                writer.writerow([repr(v) if isinstance(v, float) else v for v in (row[c] for c in REPORT_COLUMNS)])


def format_reports(reports):
    """Human-readable table with one block per scenario."""
    rows = [report_rows(r, "data") for r in reports]
    width = max([len(row["products"]) for block in rows for row in block] + [8]) + 2
    head = f"{'Scenario':<9}{'Products':<{width}}{'Data':<8}{'R2':>8}{'RMSE':>10}{'MAE':>10}{'Coverage%':>11}{'n_test':>8}"
    lines = [head, "-" * len(head)]
    for block in rows:
        for row in block:
            lines.append(
                f"{str(row['scenario']):<9}{row['products']:<{width}}{row['data']:<8}{_fmt(row['r2']):>8}"
                f"{_fmt(row['rmse']):>10}{_fmt(row['mae']):>10}{row['coverage_percent']:>11.2f}{row['n_test']:>8}"
            )
        lines.append("")
    return "\n".join(lines)


def dumps_fusion_model(model):
    lines = [
        "aeromix-fusion 1",
        f"scenario {model.scenario.id} {','.join(model.scenario.products)}",
        "features " + ",".join(model.feature_names),
        f"combiners {len(model.combiners)}",
    ]
    for subset, comb in model.combiners.items():
        coefs = " ".join(repr(float(c)) for c in comb.coef_)
        lines.append(f"combiner {','.join(subset)} {float(comb.intercept_)!r} {coefs}")
    for p in model.scenario.products:
        lines.append(f"base {p}")
        lines.extend(model_lines(model.base_models[p]))
    return "\n".join(lines) + "\n"


def loads_fusion_model(text):
    reader = _Reader(text.splitlines())
    if reader.next("aeromix-fusion")[1] != "1":
        raise TableFormatError("unsupported fusion bundle version")
    _, sid, prods = reader.next("scenario")
    scenario = FusionScenario(int(sid), tuple(prods.split(",")))
    features = tuple(reader.next("features")[1].split(","))
    combiners = {}
    for _ in range(int(reader.next("combiners")[1])):
        tokens = reader.next("combiner")
        comb = StackingCombiner()
        comb.intercept_ = float(tokens[2])
        comb.coef_ = np.array([float(v) for v in tokens[3:]])
        comb.n_features_in_ = len(comb.coef_)
        combiners[tuple(tokens[1].split(","))] = comb
    base_models = {}
    for _ in scenario.products:
        p = reader.next("base")[1]
        base_models[p] = read_model(reader)
    return DecisionFusionModel(scenario, base_models, combiners, features)
