import datetime as dt
import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from aeromix.exceptions import InsufficientDataError, ValidationError
from aeromix.fusion import (
    SCENARIOS,
    DecisionFusionModel,
    FusionScenario,
    StackingCombiner,
    apply_decision_fusion,
    coverage,
    dumps_fusion_model,
    format_reports,
    fuse_data_level,
    fuse_data_level_arrays,
    loads_fusion_model,
    quality_weight,
    run_scenario,
    train_decision_fusion,
)
from aeromix.mlcore import TrainingMatrix
from aeromix.preprocess import WindowSample

from conftest import SMALL_GRID
from oracles import min_norm_lstsq, rank_deficient_design, sse

DAY = dt.date(2013, 3, 1)


def sample(mean, weight, valid=True):
    return WindowSample("s", DAY, (0.0, 0.0), mean, 0.0, weight, 9, valid)


def combiner_with(coef, intercept):
    comb = StackingCombiner()
    comb.coef_, comb.intercept_, comb.n_features_in_ = np.array(coef, dtype=float), float(intercept), len(coef)
    return comb


def model_with(products, coef, intercept):
    scenario = FusionScenario(99, tuple(products))
    return DecisionFusionModel(scenario, {}, {scenario.products: combiner_with(coef, intercept)})


# --------------------------------------------------------------------------
# data level

def test_quality_weight_examples():
    assert quality_weight([3] * 9) == 1.0
    assert quality_weight([3, 3, 3, 0, 1, 2, 0, None, 2]) == pytest.approx(1 / 3, abs=1e-12)
    assert quality_weight([0, 1, 2] * 3) == 0.0
    with pytest.raises(ValidationError):
        quality_weight([3] * 10)


@given(st.lists(st.one_of(st.none(), st.integers(0, 3)), min_size=9, max_size=9))
def test_quality_weight_takes_ninths(codes):
    w = quality_weight(codes)
    assert 0 <= w <= 1 and (w * 9) == round(w * 9)


def test_fuse_data_level_examples():
    assert fuse_data_level([sample(0.5, 1.0), sample(0.9, 0.0)]) == 0.5
    assert fuse_data_level([sample(0.4, 4 / 9), sample(0.6, 4 / 9)]) == pytest.approx(0.5, abs=1e-12)
    assert fuse_data_level([sample(0.4, 0.0), sample(0.6, 0.0)]) is None
    assert fuse_data_level([sample(0.4, 1.0, valid=False), sample(0.6, 2 / 9)]) == 0.6


window = st.tuples(st.floats(0, 3), st.integers(0, 9).map(lambda k: k / 9), st.booleans())


@given(st.lists(window, min_size=1, max_size=4), st.randoms(use_true_random=False))
def test_fuse_data_level_convex_and_order_free(entries, rnd):
    samples = [sample(m, w, v) for m, w, v in entries]
    fused = fuse_data_level(samples)
    used = [m for m, w, v in entries if v and w > 0]
    if not used:
        assert fused is None
        return
    assert min(used) - 1e-12 <= fused <= max(used) + 1e-12
    shuffled = list(samples)
    rnd.shuffle(shuffled)
    assert fuse_data_level(shuffled) == pytest.approx(fused, abs=1e-12)
    arr, ok = fuse_data_level_arrays([np.array([m]) for m, _, _ in entries],
                                     [np.array([w]) for _, w, _ in entries],
                                     [np.array([v]) for _, _, v in entries])
    assert ok[0] and arr[0] == pytest.approx(fused, abs=1e-12)


# --------------------------------------------------------------------------
# coverage

def test_coverage_examples():
    assert coverage([True] * 69 + [False] * 31) == 69.0
    left = np.zeros((10, 10), dtype=bool)
    left[:, :5] = True
    assert coverage(left | ~left) == 100.0
    with pytest.raises(ValidationError):
        coverage([])


def test_union_coverage_of_independent_masks():
    rng = np.random.default_rng(77)
    a = rng.random((100, 100)) < 0.6
    b = rng.random((100, 100)) < 0.7
    assert abs(coverage(a | b) - 100 * (1 - 0.4 * 0.3)) <= 2.0


# --------------------------------------------------------------------------
# decision level

def test_canonical_scenarios():
    table = {
        1: "MDB VDB", 2: "MDB MDT VDB", 3: "MDB VDB VDT", 4: "MDB MDT VDB VDT", 5: "MDT VDT", 6: "MDB MDT VDT",
        7: "MDT VDB VDT", 8: "MDB MDT", 9: "VDB VDT", 10: "MDB VDT", 11: "MDT VDB",
    }
    assert sorted(SCENARIOS) == list(range(1, 12))
    for sid, products in table.items():
        assert SCENARIOS[sid].products == tuple(products.split())
    assert len({s.products for s in SCENARIOS.values()}) == 11


def test_scenario_validation():
    assert FusionScenario(1, ("VDB", "MDB")).products == ("MDB", "VDB")
    for bad in ((), ("MDB", "MDB"), ("XYZ",)):
        with pytest.raises(ValidationError):
            FusionScenario(1, bad)


def test_apply_decision_fusion_examples():
    assert apply_decision_fusion(model_with(["MDB"], [1.0], 0.0), {"MDB": 42.0}) == 42.0
    assert apply_decision_fusion(model_with(["MDB", "VDB"], [0.5, 0.5], 0.0), {"MDB": 10, "VDB": 20}) == 15.0
    assert apply_decision_fusion(model_with(["MDB", "VDB"], [1.0, 1.0], 5.0), {"MDB": 10, "VDB": 20}) == 35.0
    with pytest.raises(ValidationError, match="VDB"):
        apply_decision_fusion(model_with(["MDB", "VDB"], [1.0, 1.0], 0.0), {"MDB": 10})


def test_single_decision_equal_to_target_gives_identity(rng):
    y = rng.uniform(5, 80, size=40)
    comb = StackingCombiner(fit_single=True).fit(y[:, None], y)
    assert comb.coef_[0] == pytest.approx(1.0, abs=1e-8)
    assert comb.intercept_ == pytest.approx(0.0, abs=1e-8)
    passthrough = StackingCombiner().fit(y[:, None] * 2, y)
    assert passthrough.coef_.tolist() == [1.0] and passthrough.intercept_ == 0.0


def test_identical_decision_columns_tie(rng):
    f_train, f_test = rng.uniform(5, 80, size=60), rng.uniform(5, 80, size=20)
    y_train = f_train + rng.normal(size=60)
    y_test = f_test + rng.normal(size=20)
    one = StackingCombiner(fit_single=True).fit(f_train[:, None], y_train)
    two = StackingCombiner().fit(np.column_stack([f_train, f_train]), y_train)
    assert two.coef_[0] == pytest.approx(two.coef_[1], rel=1e-6)
    rmse_one = math.sqrt(sse(y_test, one.predict(f_test[:, None])) / 20)
    rmse_two = math.sqrt(sse(y_test, two.predict(np.column_stack([f_test, f_test]))) / 20)
    assert rmse_two == pytest.approx(rmse_one, abs=1e-6)


def test_combiner_matches_pseudo_inverse():
    rng = np.random.default_rng(5)
    for i in range(100):
        p = int(rng.integers(2, 5))
        n = p + 3 + int(rng.integers(0, 40))
        D = rank_deficient_design(rng, n, p) if i % 2 else rng.normal(size=(n, p))
        y = D @ rng.uniform(0, 1, size=p) + rng.normal(size=n)
        comb = StackingCombiner().fit(D, y)
        coef, intercept = min_norm_lstsq(D, y)
        ours, oracle = sse(y, comb.predict(D)), sse(y, D @ coef + intercept)
        assert abs(ours - oracle) <= 1e-8 * oracle


def synthetic_matrices(rng, n=80, noise=(2.0, 6.0), drop=()):
    """Two products sharing one target; product ``p`` has feature noise ``noise[p]``."""
    keys = [(f"S{i % 9}", DAY + dt.timedelta(days=i // 9)) for i in range(n)]
    signal = rng.uniform(0, 10, size=n)
    y = 10 + 4 * signal + rng.normal(size=n)
    out = {}
    for p, sd in zip(("MDB", "VDB"), noise):
        X = np.column_stack([signal + rng.normal(scale=sd / 4, size=n), rng.normal(size=n)])
        keep = [i for i in range(n) if (p, i) not in drop]
        out[p] = TrainingMatrix(("aod", "other"), X[keep], y[keep], [keys[i] for i in keep])
    return out


PARAMS = {"n_estimators": 30, "max_depth": 2}


@pytest.mark.parametrize("folds", [0, 5])
def test_combiner_training_error_bound(rng, folds):
    matrices = synthetic_matrices(rng)
    model = train_decision_fusion(SCENARIOS[1], matrices, PARAMS, seed=3, stack_folds=folds)
    assert set(model.base_models) == {"MDB", "VDB"}
    y = matrices["MDB"].y
    if folds == 0:
        inputs = model.decisions({p: m.X for p, m in matrices.items()})
    else:
        # out-of-fold decisions are the combiner's own fitting inputs
        from aeromix.fusion import _out_of_fold
        from aeromix.mlcore.selection import fold_assignment

        f = fold_assignment(len(y), folds, 3)
        inputs = {p: _out_of_fold("gbt", PARAMS, 3, m, f) for p, m in matrices.items()}
    fused = model.combiners[("MDB", "VDB")].predict(np.column_stack([inputs["MDB"], inputs["VDB"]]))
    for p in ("MDB", "VDB"):
        assert sse(y, fused) <= sse(y, inputs[p]) * (1 + 1e-12)


def test_fallback_combiners_cover_partial_availability(rng):
    drop = {("VDB", i) for i in range(0, 80, 4)} | {("MDB", i) for i in range(1, 80, 8)}
    matrices = synthetic_matrices(rng, drop=drop)
    model = train_decision_fusion(SCENARIOS[1], matrices, PARAMS, seed=1)
    assert set(model.combiners) == {("MDB", "VDB"), ("MDB",), ("VDB",)}
    nan = np.nan
    out = model.predict_available({"MDB": np.array([10.0, nan, 30.0, nan]), "VDB": np.array([12.0, 22.0, nan, nan])})
    both = model.combiners[("MDB", "VDB")].predict([[10.0, 12.0]])[0]
    assert out[0] == both and out[1] == 22.0 and out[2] == 30.0 and np.isnan(out[3])
    assert model.combiner_for(["VDB"])[0] == ("VDB",)


def test_no_co_valid_keys_is_an_error(rng):
    matrices = synthetic_matrices(rng, n=20)
    matrices["VDB"] = matrices["VDB"].take([])
    with pytest.raises(InsufficientDataError):
        train_decision_fusion(SCENARIOS[1], matrices, PARAMS)


def test_fusion_bundle_round_trip(rng):
    matrices = synthetic_matrices(rng)
    model = train_decision_fusion(SCENARIOS[1], matrices, PARAMS, seed=2)
    text = dumps_fusion_model(model)
    back = loads_fusion_model(text)
    assert dumps_fusion_model(back) == text
    features = {p: m.X for p, m in matrices.items()}
    dec = model.decisions(features)
    assert np.array_equal(back.predict_available(back.decisions(features)), model.predict_available(dec))


# --------------------------------------------------------------------------
# scenario runs on a synthetic scene

@pytest.fixture(scope="module")
def scenario_reports(small_dataset):
    return {sid: run_scenario(SCENARIOS[sid], small_dataset, seed=4, param_grid=SMALL_GRID) for sid in (1, 9)}


def test_scenario_test_keys_are_paired(scenario_reports):
    for report in scenario_reports.values():
        keys = report.eval_keys
        assert all(keys[p] == keys["fused"] for p in report.scenario.products)
        assert len(keys["fused"]) == report.n_test > 0


def test_union_coverage_dominates(scenario_reports):
    for report in scenario_reports.values():
        assert 0 <= report.fused_coverage <= 100
        assert report.fused_coverage >= max(report.product_coverage.values())


def test_scenario_run_is_reproducible(small_dataset, scenario_reports):
    again = run_scenario(SCENARIOS[1], small_dataset, seed=4, param_grid=SMALL_GRID)
    first = scenario_reports[1]
    assert again.fused_metrics == first.fused_metrics
    assert dumps_fusion_model(again.model) == dumps_fusion_model(first.model)


def test_single_product_scenario_matches_base(small_dataset):
    report = run_scenario(FusionScenario(12, ("VDT",)), small_dataset, seed=4, param_grid=SMALL_GRID)
    assert report.fused_metrics.rmse == pytest.approx(report.product_metrics["VDT"].rmse, abs=1e-6)
    assert report.fused_coverage == report.product_coverage["VDT"]


def test_report_table_lists_every_row(scenario_reports):
    text = format_reports(list(scenario_reports.values()))
    assert text.count("fused") == 2
    assert "MDB+VDB" in text and "VDB+VDT" in text


@given(st.lists(st.booleans(), min_size=1, max_size=12), st.lists(st.booleans(), min_size=1, max_size=12))
def test_union_coverage_property(a, b):
    n = min(len(a), len(b))
    assume(n > 0)
    a, b = np.array(a[:n]), np.array(b[:n])
    assert coverage(a | b) >= max(coverage(a), coverage(b))


def test_subset_enumeration_matches_scenario_size():
    for s in SCENARIOS.values():
        subsets = [c for k in range(1, len(s.products) + 1) for c in itertools.combinations(s.products, k)]
        assert len(subsets) == 2 ** len(s.products) - 1
