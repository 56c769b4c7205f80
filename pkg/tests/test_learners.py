import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import cart_oracle
from algoselect.learners import (
    Dataset,
    ModelFormatError,
    TrainedModel,
    TreeParams,
    expand_grid,
    f1_macro,
    fit_forest,
    fit_gbt,
    fit_tree,
    impute_medians,
    logo_grid_search,
    nested_logo_cv,
    r2,
    resolve_grid,
)
from algoselect.learners import cv as cv_module
from algoselect.sampling import RngStream
from metric_oracle import metric_cases, naive_f1, naive_r2
from synthetic import quadratic, separable


def test_metric_oracles_1000_cases():
    worst_r2 = worst_f1 = 0.0
    for y, yhat, labels, preds in metric_cases():
        worst_r2 = max(worst_r2, abs(r2(y, yhat) - naive_r2(y.tolist(), yhat.tolist())))
        worst_f1 = max(worst_f1, abs(f1_macro(labels, preds) - naive_f1(labels.tolist(), preds.tolist())))
    assert worst_r2 <= 1e-12
    assert worst_f1 <= 1e-12


def test_r2_far_off_predictions_relative():
    # r2 near -1e6 sits beyond absolute 1e-12 resolution, so compare relatively
    rng = np.random.default_rng(5)
    for _ in range(200):
        y = rng.normal(size=30) * 1e-3
        yhat = rng.normal(size=30)
        assert r2(y, yhat) == pytest.approx(naive_r2(y.tolist(), yhat.tolist()), rel=1e-12)


def test_r2_examples():
    assert r2([0, 1, 2], [0, 1, 2]) == 1.0
    assert r2([0, 1, 2], [1, 1, 1]) == 0.0
    assert r2([0, 1, 2], [0, 1, 1]) == 0.5
    assert r2([3, 3], [3, 3]) == 1.0
    assert r2([3, 3], [3, 4]) == 0.0
    with pytest.raises(ValueError):
        r2([], [])


def test_f1_examples():
    assert f1_macro(["a", "b", "a"], ["a", "b", "a"]) == 1.0
    assert f1_macro(["a", "a", "b", "b"], ["a"] * 4) == pytest.approx(1 / 3, abs=1e-15)
    assert f1_macro(["a", "a"], ["b", "b"]) == 0.0
    # a class in the vocabulary but in neither argument is skipped
    assert f1_macro(["a", "b"], ["a", "b"], labels=["a", "b", "c"]) == 1.0


# trees ---------------------------------------------------------------------


def regression_data(m=60, p=4, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, p))
    y = np.sin(2 * X[:, 0]) + X[:, 1] * X[:, 2] + 0.1 * rng.normal(size=m)
    return Dataset(X, y, np.arange(m) % 5)


def class_data(m=80, p=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, p))
    labels = np.array(["x", "y", "z"], dtype=object)[(X[:, 0] > 0).astype(int) + (X[:, 1] > 0.5)]
    return Dataset(X, labels, np.arange(m) % 4, task="classification")


@pytest.mark.parametrize("max_depth,min_leaf,frac", [(None, 1, 1.0), (3, 1, 1.0), (None, 4, 0.5), (2, 2, 0.25)])
@pytest.mark.parametrize("seed", [0, 1])
def test_tree_matches_oracle_regression(max_depth, min_leaf, frac, seed):
    data = regression_data(seed=seed)
    params = TreeParams(max_depth=max_depth, min_samples_leaf=min_leaf, features_per_split=frac)
    stream = RngStream(seed).derive("tree")
    model = fit_tree(data, params, stream)
    ref = cart_oracle.grow(data.X.tolist(), data.y.tolist(), 0, max_depth, min_leaf,
                           params.n_try(data.X.shape[1]), cart_oracle.seed_for_tree(stream.seed64, 0))
    assert int(model.sizes[0]) == cart_oracle.n_nodes(ref)
    probe = np.random.default_rng(99).normal(size=(200, data.X.shape[1]))
    ours = model.predict(probe)
    theirs = np.array([cart_oracle.predict(ref, x)[0] for x in probe])
    assert np.max(np.abs(ours - theirs)) <= 1e-12


@pytest.mark.parametrize("max_depth,frac", [(None, 1.0), (2, 1.0), (None, 0.34)])
def test_tree_matches_oracle_classification(max_depth, frac):
    data = class_data()
    params = TreeParams(max_depth=max_depth, features_per_split=frac)
    stream = RngStream(5)
    model = fit_tree(data, params, stream)
    ref = cart_oracle.grow(data.X.tolist(), data.class_index().tolist(), 3, max_depth, 1,
                           params.n_try(data.X.shape[1]), cart_oracle.seed_for_tree(stream.seed64, 0))
    assert int(model.sizes[0]) == cart_oracle.n_nodes(ref)
    probe = np.random.default_rng(7).normal(size=(300, 3))
    expected = [data.classes[int(np.argmax(cart_oracle.predict(ref, x)))] for x in probe]
    assert model.predict(probe).tolist() == expected


def test_tree_threshold_split():
    x = np.linspace(-1, 1, 20)
    data = Dataset(x[:, None], np.where(x < 0, 0, 1).astype(str), np.zeros(20), task="classification")
    model = fit_tree(data, TreeParams(max_depth=1), RngStream(0))
    assert (model.predict(data.X) == data.y).all()
    assert int(model.sizes[0]) == 3


def test_constant_target_single_leaf():
    data = Dataset(np.random.default_rng(0).normal(size=(10, 2)), np.full(10, 2.5), np.zeros(10))
    model = fit_tree(data, TreeParams(), RngStream(0))
    assert int(model.sizes[0]) == 1
    assert (model.predict(np.zeros((3, 2))) == 2.5).all()


def test_pure_node_never_splits():
    data = Dataset(np.arange(8.0)[:, None], ["a"] * 8, np.zeros(8), task="classification")
    assert int(fit_tree(data, TreeParams(), RngStream(0)).sizes[0]) == 1


def test_empty_dataset_rejected():
    data = Dataset(np.zeros((0, 2)), np.zeros(0), np.zeros(0))
    for f in (fit_tree, fit_forest, fit_gbt):
        with pytest.raises(ValueError):
            f(data, TreeParams(n_trees=2), RngStream(0))


def test_tie_votes_go_to_lowest_class():
    # identical features, one row per class: the single leaf holds a 1:1 count
    data = Dataset(np.zeros((2, 1)), ["b", "a"], np.zeros(2), task="classification")
    assert fit_tree(data, TreeParams(), RngStream(0)).predict([[0.0]])[0] == "a"


def test_forest_one_tree_without_bootstrap_is_tree():
    data = regression_data()
    params = TreeParams(n_trees=1, bootstrap=False, features_per_split=0.5)
    f = fit_forest(data, params, RngStream(3))
    t = fit_tree(data, params, RngStream(3))
    for name in "FTLRV":
        assert np.array_equal(getattr(f, name), getattr(t, name))
    probe = np.random.default_rng(1).normal(size=(50, 4))
    assert np.array_equal(f.predict(probe), t.predict(probe))


@pytest.mark.parametrize("task", ["regression", "classification"])
def test_row_order_does_not_matter(task):
    data = regression_data() if task == "regression" else class_data()
    perm = np.random.default_rng(4).permutation(len(data))
    shuffled = data.subset(perm)
    for fitter in (fit_forest, fit_gbt):
        params = TreeParams(n_trees=5, subsample=0.7, features_per_split=0.5)
        a = fitter(data, params, RngStream(8))
        b = fitter(shuffled, params, RngStream(8))
        assert a.to_json() == b.to_json()


def test_forest_tree_prefix_independent_of_total():
    data = class_data()
    small = fit_forest(data, TreeParams(n_trees=3), RngStream(2))
    big = fit_forest(data, TreeParams(n_trees=10), RngStream(2))
    probe = np.random.default_rng(0).normal(size=(100, 3))
    assert np.array_equal(small.scores(probe), big.scores(probe, n_trees=3))


def test_forest_separable_training_accuracy():
    data = separable()
    model = fit_forest(data, TreeParams(n_trees=50), RngStream(1))
    assert np.mean(model.predict(data.X) == data.y) >= 0.95


def test_gbt_one_deep_tree_interpolates():
    data = regression_data(m=30)
    model = fit_gbt(data, TreeParams(n_trees=1, learning_rate=1.0, max_depth=None), RngStream(0))
    assert np.max(np.abs(model.predict(data.X) - data.y)) <= 1e-9


def test_gbt_staged_loss_non_increasing():
    data = regression_data()
    model = fit_gbt(data, TreeParams(n_trees=40, learning_rate=0.3, max_depth=3), RngStream(0))
    losses = [np.mean((model.predict(data.X, n_trees=n) - data.y) ** 2) for n in range(1, 41)]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))


def test_gbt_regression_train_r2():
    data = quadratic()
    model = fit_gbt(data, TreeParams(n_trees=100, learning_rate=0.1, max_depth=3), RngStream(0))
    assert r2(data.y, model.predict(data.X)) >= 0.9


@pytest.mark.parametrize("classes", [("a", "b"), ("x", "y", "z")])
def test_gbt_classification(classes):
    data = class_data() if len(classes) == 3 else separable(m=100)
    model = fit_gbt(data, TreeParams(n_trees=30, max_depth=3), RngStream(0))
    assert model.n_scores == (1 if len(classes) == 2 else 3)
    assert np.mean(model.predict(data.X) == data.y) >= 0.9


def test_imputation_uses_training_medians():
    X = np.array([[1.0, np.nan], [2.0, 4.0], [3.0, 6.0], [np.nan, np.nan]])
    assert impute_medians(X).tolist() == [2.0, 5.0]
    assert impute_medians(np.full((2, 1), np.nan)).tolist() == [0.0]
    data = Dataset(X, [1.0, 2.0, 3.0, 4.0], np.zeros(4))
    model = fit_tree(data, TreeParams(), RngStream(0))
    assert model.medians.tolist() == [2.0, 5.0]
    assert model.predict([[np.nan, np.nan]])[0] == model.predict([[2.0, 5.0]])[0]


@given(st.integers(0, 2**32), st.sampled_from(["forest", "gbt"]), st.sampled_from(["regression", "classification"]))
@settings(max_examples=15, deadline=None)
def test_serialization_roundtrip(seed, kind, task):
    data = regression_data(m=40) if task == "regression" else class_data(m=40)
    fitter = fit_forest if kind == "forest" else fit_gbt
    model = fitter(data, TreeParams(n_trees=4, max_depth=4), RngStream(seed))
    back = TrainedModel.from_json(model.to_json())
    assert back.to_json() == model.to_json()
    probe = np.random.default_rng(seed).normal(size=(100, data.X.shape[1])) * 2
    assert np.array_equal(back.scores(probe), model.scores(probe))
    assert np.array_equal(back.predict(probe), model.predict(probe))


def test_model_file_roundtrip_and_version(tmp_path):
    model = fit_forest(class_data(), TreeParams(n_trees=3), RngStream(0))
    model.save(tmp_path / "m.json")
    assert TrainedModel.load(tmp_path / "m.json").to_json() == model.to_json()
    d = json.loads(model.to_json())
    d["format_version"] = 99
    with pytest.raises(ModelFormatError):
        TrainedModel.from_dict(d)


def test_params_validation():
    with pytest.raises(ValueError):
        TreeParams(n_trees=0)
    with pytest.raises(ValueError):
        TreeParams(features_per_split=0)
    with pytest.raises(ValueError):
        TreeParams.from_dict({"depth": 3})
    assert TreeParams(features_per_split=1 / 3).n_try(9) == 3
    assert resolve_grid({"features_per_split": ["sqrt"]}, 16) == [{"features_per_split": 0.25}]


# nested cross-validation ---------------------------------------------------


def ten_group_data(with_nan=True, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(100, 3))
    if with_nan:
        X[rng.random((100, 3)) < 0.15] = np.nan
    y = np.nan_to_num(X[:, 0]) + rng.normal(size=100) * 0.1
    groups = np.repeat(np.arange(1, 11), 10)
    return Dataset(X, y, groups)


SMALL_GRID = expand_grid({"n_trees": [2, 4], "max_depth": [2, None]})


def test_nested_structure_and_leakage(monkeypatch):
    data = ten_group_data()
    seen = []
    real_fit = cv_module.fit

    def spy(kind, train, params, stream):
        seen.append(set(train.groups.tolist()))
        return real_fit(kind, train, params, stream)

    monkeypatch.setattr(cv_module, "fit", spy)
    res = nested_logo_cv("forest", data, SMALL_GRID, RngStream(0))
    all_groups = set(range(1, 11))
    assert [f.group for f in res.folds] == list(range(1, 11))
    medians = []
    for f in res.folds:
        test = set(f.test_rows.tolist())
        assert set(data.groups[f.test_rows].tolist()) == {f.group}
        assert not test & set(f.train_rows.tolist())
        assert len(f.inner_splits) == 9
        for tr, va in f.inner_splits:
            assert not test & set(tr.tolist()) and not test & set(va.tolist())
            assert not set(tr.tolist()) & set(va.tolist())
        assert sorted(np.concatenate([va for _, va in f.inner_splits]).tolist()) == sorted(f.train_rows.tolist())
        # the refit model's medians come from its own training rows only
        assert np.array_equal(f.model.medians, impute_medians(data.X[f.train_rows]))
        medians.append(f.model.medians)
    assert any(not np.array_equal(a, b) for a, b in zip(medians, medians[1:]))
    # every fit leaves out two groups (inner) or one (refit); none sees all data
    assert all(len(all_groups - s) in (1, 2) for s in seen)
    assert sum(len(all_groups - s) == 1 for s in seen) == 10
    assert sum(len(all_groups - s) == 2 for s in seen) == 45 * 2


def test_grid_of_one_equals_plain_logo():
    data = ten_group_data(with_nan=False)
    grid = [{"n_trees": 3, "max_depth": 3}]
    res = nested_logo_cv("gbt", data, grid, RngStream(1))
    best, _ = logo_grid_search("gbt", data, grid, RngStream(1))
    assert best == grid[0]
    assert all(f.chosen == grid[0] for f in res.folds)
    for f in res.folds:
        plain = fit_gbt(data.subset(f.train_rows), TreeParams(**grid[0]), RngStream(1).derive(f"outer{f.group}").derive("refit"))
        assert np.array_equal(plain.predict(data.X[f.test_rows]), f.predictions)
        assert f.outer_score == r2(data.y[f.test_rows], f.predictions)


def test_nested_cv_deterministic():
    data = ten_group_data()
    a = nested_logo_cv("forest", data, SMALL_GRID, RngStream(4))
    b = nested_logo_cv("forest", data, SMALL_GRID, RngStream(4))
    assert [f.chosen for f in a.folds] == [f.chosen for f in b.folds]
    assert np.array_equal(a.predictions(100), b.predictions(100))
    assert list(a.report_rows()) == list(b.report_rows())


def test_n_trees_prefix_sharing_matches_separate_fits():
    data = ten_group_data(with_nan=False)
    shared = nested_logo_cv("forest", data, SMALL_GRID, RngStream(6))
    for f in shared.folds:
        for p, score in f.inner_scores.items():
            assert np.isfinite(score)
    # a grid with only the small tree count scores the same as inside the shared grid
    alone = nested_logo_cv("forest", data, expand_grid({"n_trees": [2], "max_depth": [2, None]}), RngStream(6))
    for a, b in zip(shared.folds, alone.folds):
        for k, v in b.inner_scores.items():
            assert a.inner_scores[k] == v


def test_nested_cv_errors():
    data = ten_group_data()
    few = data.subset(np.flatnonzero(data.groups <= 2))
    with pytest.raises(ValueError):
        nested_logo_cv("forest", few, SMALL_GRID, RngStream(0))
    with pytest.raises(ValueError):
        nested_logo_cv("forest", data, [], RngStream(0))
    with pytest.raises(ValueError):
        nested_logo_cv("forest", data, [SMALL_GRID[0], SMALL_GRID[0]], RngStream(0))
