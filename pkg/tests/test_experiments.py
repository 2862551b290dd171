import csv
import json

import numpy as np
import pytest
from sklearn.tree import DecisionTreeRegressor

from texton.config import RunConfig
from texton.ensemble import METHODS, PROPOSED, MethodSelection, TextureEnsemble, all_selections
from texton.experiments import (AblationCell, correlation_diagnostic, correlation_summary,
                                design_from_cells, importance_svg, published_fmd_design,
                                read_accuracy_csv, report_emit, rf_importance, run_ablation)
from texton.forest import RandomForestRegressor, RegressionTree
from texton.synth import SyntheticTextureSpec, synth_generate


# -- random forest -----------------------------------------------------------
def test_single_informative_feature_dominates(rng):
    X = rng.integers(0, 2, (60, 5)).astype(float)
    y = 3 * X[:, 0] + rng.normal(0, 0.01, 60)
    imp = RandomForestRegressor(50, seed=0).fit(X, y).feature_importances_
    assert imp[0] >= 0.95
    assert imp.sum() == pytest.approx(1.0)


def test_tree_matches_sklearn_without_bootstrap(rng):
    X = rng.random((40, 3))
    y = np.sin(4 * X[:, 0]) + X[:, 1] ** 2 + 0.1 * rng.standard_normal(40)
    ours = RegressionTree(max_depth=4).fit(X, y)
    ref = DecisionTreeRegressor(max_depth=4, random_state=0).fit(X, y)
    np.testing.assert_allclose(ours.predict(X), ref.predict(X), atol=1e-12)
    np.testing.assert_allclose(ours.feature_importances_, ref.feature_importances_, atol=1e-10)


def test_forest_fits_training_data(rng):
    X = rng.random((30, 2))
    y = X[:, 0] * 5
    pred = RandomForestRegressor(30, seed=1).fit(X, y).predict(X)
    assert np.corrcoef(pred, y)[0, 1] > 0.95


def test_published_grid_ranks_gap_then_deepten():
    X, y = published_fmd_design()
    assert X.shape == (15, 4) and len({tuple(r) for r in X}) == 15
    rep = rf_importance(X, y)
    assert rep.majority_ranking[:2] == ("gap", "deepten")
    assert set(rep.majority_ranking[2:]) == {"histogram", "fap"}
    assert rep.importances.sum() == pytest.approx(1.0)
    assert len(rep.rankings) == 10


def test_importance_is_row_order_invariant():
    X, y = published_fmd_design()
    perm = np.random.default_rng(9).permutation(15)
    a = rf_importance(X, y, n_trees=30, seeds=range(3))
    b = rf_importance(X[perm], y[perm], n_trees=30, seeds=range(3))
    np.testing.assert_array_equal(a.importances, b.importances)


def test_constant_accuracies_are_degenerate():
    X, _ = published_fmd_design()
    rep = rf_importance(X, np.full(15, 50.0))
    assert rep.degenerate
    np.testing.assert_allclose(rep.importances, 0.25)


def test_importance_input_validation():
    X, y = published_fmd_design()
    with pytest.raises(ValueError):
        rf_importance(X[:, :3], y)
    with pytest.raises(ValueError):
        rf_importance(np.vstack([X, X[:1]]), np.append(y, 1.0))


# -- correlation -------------------------------------------------------------
def test_independent_blocks_are_weakly_correlated(rng):
    s = correlation_summary({"a": rng.standard_normal((1024, 6)),
                             "b": rng.standard_normal((1024, 5))})
    assert s.pair("a", "b").mean_abs < 0.1


def test_duplicated_block_is_matched(rng):
    a = rng.standard_normal((256, 4))
    const = np.ones((256, 1))
    s = correlation_summary({"a": a, "b": np.hstack([2 * a + 1, const])})
    assert s.pair("b", "a").matched_abs == pytest.approx(1.0)
    assert s.excluded == {"a": 0, "b": 1}
    assert s.matrix.shape == (8, 8)


def test_correlation_needs_two_methods(rng):
    with pytest.raises(ValueError):
        correlation_summary({"a": rng.standard_normal((20, 3))})


def test_correlation_diagnostic_on_model(rng):
    cfg = RunConfig.preset("desk")
    model = TextureEnsemble(cfg.ensemble(4), rng)
    s = correlation_diagnostic(model, rng.standard_normal((8, 3, 64, 64)).astype(np.float32))
    assert {(p.a, p.b) for p in s.pairs} == {("deepten", "histogram"), ("deepten", "fap"),
                                             ("histogram", "fap")}


# -- reports -----------------------------------------------------------------
def fake_cells():
    r = np.random.default_rng(0)
    return [AblationCell(s, "toy", list(r.uniform(40, 90, 3))) for s in all_selections()]


def test_ablation_csv_round_trip(tmp_path):
    cells = fake_cells()
    paths = report_emit(cells, None, tmp_path)
    rows = list(csv.DictReader(open(paths["ablation"])))
    assert len(rows) == 15 and list(rows[0]) == ["deepten", "gap", "histogram", "fap",
                                                 "mean_acc", "std_acc", "n_splits"]
    X, y = read_accuracy_csv(paths["ablation"])
    X0, y0 = design_from_cells(cells)
    np.testing.assert_array_equal(X, X0)
    np.testing.assert_array_equal(y, y0)


def test_accuracy_column_alias_and_missing_columns(tmp_path):
    p = tmp_path / "acc.csv"
    p.write_text("deepten,gap,histogram,fap,accuracy\n1,0,0,0,70\n0,1,0,0,75\n")
    X, y = read_accuracy_csv(p)
    assert y.tolist() == [70.0, 75.0]
    (tmp_path / "bad.csv").write_text("deepten,gap,accuracy\n1,0,3\n")
    with pytest.raises(ValueError):
        read_accuracy_csv(tmp_path / "bad.csv")


def test_importance_outputs(tmp_path):
    rep = rf_importance(*published_fmd_design(), n_trees=20, seeds=range(2))
    paths = report_emit(None, rep, tmp_path)
    assert importance_svg(rep).count("<rect") == 4
    assert paths["svg"].read_text().count("<rect") == 4
    rows = list(csv.DictReader(open(paths["importance"])))
    assert [r["method"] for r in rows] == list(METHODS)
    assert sorted(int(r["rank"]) for r in rows) == [1, 2, 3, 4]
    meta = json.loads((tmp_path / "importance.json").read_text())
    assert meta["n_trees"] == 20 and meta["seeds"] == [0, 1]


def test_report_to_unwritable_location(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        report_emit(fake_cells(), None, blocker / "sub")


# -- ablation runner ---------------------------------------------------------
@pytest.fixture(scope="module")
def tiny():
    m = synth_generate(SyntheticTextureSpec(samples_per_class=3, image_size=64))
    cfg = RunConfig.preset("desk")
    cfg.train.epochs = 1
    cfg.train.batch_size = 6
    return m, cfg


def test_ablation_checkpoints_and_resumes(tiny, tmp_path, monkeypatch):
    manifest, cfg = tiny
    sels = [MethodSelection.parse("gap"), MethodSelection.parse("deepten,fap")]
    cells = run_ablation(manifest, cfg, tmp_path, selections=sels[::-1])
    assert [c.selection for c in cells] == sels
    assert all(not c.error and len(c.split_accuracies) == 1 for c in cells)
    assert sorted(p.name for p in (tmp_path / "cells").iterdir()) == ["cell_02.json",
                                                                      "cell_09.json"]
    import texton.experiments as ex
    monkeypatch.setattr(ex, "run_cell", lambda *a, **k: pytest.fail("should resume"))
    again = run_ablation(manifest, cfg, tmp_path, selections=sels)
    assert [c.split_accuracies for c in again] == [c.split_accuracies for c in cells]


def test_ablation_captures_cell_errors(tiny):
    manifest, cfg = tiny
    cfg = RunConfig.preset("desk")
    cfg.train.epochs = 1
    cfg.model.aggregator = "bilinear"
    cells = run_ablation(manifest, cfg, selections=[PROPOSED, MethodSelection.parse("gap,fap")])
    assert "bilinear" in cells[1].error
    assert not cells[0].error and cells[0].split_accuracies


def test_parallel_workers_match_serial(tiny):
    manifest, cfg = tiny
    sels = [MethodSelection.parse("gap"), MethodSelection.parse("fap")]
    serial = run_ablation(manifest, cfg, selections=sels)
    parallel = run_ablation(manifest, cfg, selections=sels, workers=2)
    assert [c.split_accuracies for c in serial] == [c.split_accuracies for c in parallel]
