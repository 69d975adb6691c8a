import math

import numpy as np
import pytest

from riskgaze.core.config import ClassifyConfig
from riskgaze.core.errors import ConfigError, TooFewSamples
from riskgaze.core.experiment import (
    RESULT_COLUMNS,
    TrainScaler,
    best_of,
    coarse_c_grid,
    experiment_from_dict,
    experiment_to_dict,
    fine_c_grid,
    gamma_grid,
    grid_search,
    mlp_grid,
    randomization_controls,
    resample,
    run_experiment,
    scale_train_test,
    selection_representative,
    specs_from_config,
    split_stratified,
    train_mlp,
    train_svm,
    trial_seeds,
)
from riskgaze.core.metrics import aggregate_trials
from riskgaze.core.models import ExperimentResult, ModelSpec, TrialResult

LINEAR_C1 = ModelSpec("svm_linear", "none", (("C", 1.0),))


def blobs(rng, counts=(20, 20, 20), n_features=6, gap=4.0):
    X = np.concatenate([k * gap + rng.normal(size=(n, n_features)) for k, n in enumerate(counts)])
    y = np.repeat(np.arange(len(counts)), counts)
    return X, y


# -------------------------
# Data handling
# -------------------------

def test_split_stratified_counts():
    y = np.repeat([0, 1, 2], [54, 63, 27])
    train, test = split_stratified(y, 0.25, seed=5)
    counts = np.bincount(y[test], minlength=3)
    assert 13 <= counts[0] <= 14
    assert 15 <= counts[1] <= 16
    assert 6 <= counts[2] <= 7
    assert counts.sum() == 36
    assert not set(train) & set(test)
    again = split_stratified(y, 0.25, seed=5)
    np.testing.assert_array_equal(again[1], test)


def test_split_needs_four_per_class():
    with pytest.raises(TooFewSamples):
        split_stratified(np.repeat([0, 1, 2], [10, 10, 3]))


@pytest.mark.parametrize("mode, expected", [("oversample", 47), ("undersample", 20), ("none", None)])
def test_resample_balances(rng, mode, expected):
    X, y = blobs(rng, counts=(40, 47, 20))
    Xr, yr = resample(X, y, mode, seed=1)
    counts = np.bincount(yr)
    if expected is None:
        assert counts.tolist() == [40, 47, 20]
    else:
        assert counts.tolist() == [expected] * 3
    assert len(Xr) == len(yr)


def test_resample_unknown_mode(rng):
    X, y = blobs(rng)
    with pytest.raises(ConfigError):
        resample(X, y, "smote")


def test_train_scaler_maps_test_values_without_clipping():
    scaler = TrainScaler().fit(np.array([[2.0, 3.0], [6.0, 3.0]]))
    out = scaler.transform(np.array([[4.0, 3.0], [8.0, 3.0]]))
    np.testing.assert_allclose(out, [[0.5, 0.5], [1.5, 0.5]])


def test_scale_train_test_fits_on_train_only():
    train = np.array([[0.0, 10.0], [4.0, 20.0]])
    test = np.array([[8.0, 15.0]])
    train_s, test_s, scaler = scale_train_test(train, test)
    np.testing.assert_allclose(train_s, [[0.0, 0.0], [1.0, 1.0]])
    np.testing.assert_allclose(test_s, [[2.0, 0.5]])
    np.testing.assert_allclose(scaler.transform(test), test_s)


# -------------------------
# Models
# -------------------------

def test_train_svm_and_mlp_separate_blobs(rng):
    X, y = blobs(rng)
    Xs = TrainScaler().fit(X).transform(X)
    linear = train_svm(Xs, y, "linear", C=1.0)
    rbf = train_svm(Xs, y, "rbf", C=1.0, gamma=1.0)
    mlp = train_mlp(Xs, y, hidden_units=10, seed=0, cfg=ClassifyConfig(mlp={"learning_rate": 0.01}))
    for model in (linear, rbf, mlp):
        assert np.mean(model.predict(Xs) == y) >= 0.9


def test_train_svm_rbf_needs_gamma(rng):
    X, y = blobs(rng)
    with pytest.raises(ValueError):
        train_svm(X, y, "rbf", C=1.0)


# -------------------------
# Grids
# -------------------------

def test_mlp_grid():
    assert mlp_grid(210) == [22, 45, 69, 92, 115, 139, 162, 185, 209, 232]
    assert mlp_grid(12) == [2, 3, 5, 6, 7, 9, 10, 11, 13, 14]


def test_c_grids():
    assert coarse_c_grid() == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
    assert coarse_c_grid(extended=True)[-1] == 100.0
    fine = fine_c_grid(0.5)
    assert fine[0] == 0.4 and fine[-1] == 0.6 and len(fine) == 21
    assert fine_c_grid(0.1)[0] == 0.01


def test_gamma_grid_base():
    a = math.sqrt(0.05)
    X = np.tile([[a], [-a]], (2, 210))
    base = 1.0 / (210 * 0.05)
    assert gamma_grid(X) == pytest.approx([0.1 * base, base, 10 * base])


def test_grid_search_linear_picks_from_grid(rng):
    X, y = blobs(rng)
    cfg = ClassifyConfig(cv_splits=3)
    hyper = grid_search(TrainScaler().fit(X).transform(X), y, "svm-linear", seed=2, cfg=cfg)
    assert set(hyper) == {"C"}
    assert 0.01 <= hyper["C"] <= 1.0


def test_trial_seeds_are_stable():
    assert trial_seeds(7, 4) == trial_seeds(7, 4)
    assert len(set(trial_seeds(7, 4))) == 4
    assert trial_seeds(7, 4) != trial_seeds(8, 4)


# -------------------------
# Experiments
# -------------------------

def test_run_experiment_is_deterministic(rng):
    X, y = blobs(rng)
    cfg = ClassifyConfig(n_jobs=1)
    a = run_experiment(X, y, LINEAR_C1, n_trials=4, master_seed=3, cfg=cfg)
    b = run_experiment(X, y, LINEAR_C1, n_trials=4, master_seed=3, cfg=cfg)
    assert experiment_to_dict(a) == experiment_to_dict(b)
    assert [t.trial_index for t in a.trials] == [0, 1, 2, 3]
    assert a.avg_accuracy >= 0.9

    agg = aggregate_trials(a.trials)
    assert (a.avg_accuracy, a.std_accuracy, a.avg_mcc) == (
        agg["avg_accuracy"], agg["std_accuracy"], agg["avg_mcc"])


def test_run_experiment_with_two_levels(rng):
    X, y = blobs(rng, counts=(20, 20))
    y = np.where(y == 1, 2, 0)                       # Low and High only
    fixed = run_experiment(X, y, LINEAR_C1, n_trials=2, cfg=ClassifyConfig())
    tuned = run_experiment(X, y, ModelSpec("svm_linear", "none"), n_trials=1,
                           cfg=ClassifyConfig(cv_splits=3))
    for result in (fixed, tuned):
        assert result.avg_accuracy >= 0.9
        assert all(np.shape(t.confusion) == (2, 2) for t in result.trials)


def test_experiment_dict_round_trip(rng):
    X, y = blobs(rng)
    result = run_experiment(X, y, LINEAR_C1, n_trials=2, cfg=ClassifyConfig())
    back = experiment_from_dict(experiment_to_dict(result))
    assert back == result


def test_randomization_controls_fall_to_chance(rng):
    X, y = blobs(rng, gap=6.0)
    labels, features = randomization_controls(X, y, LINEAR_C1, master_seed=1,
                                              cfg=ClassifyConfig(), n_trials=5)
    assert (labels.control, features.control) == ("shuffled_labels", "shuffled_features")
    assert labels.avg_accuracy < 0.7
    assert features.avg_accuracy < 0.7


def test_specs_from_config():
    specs = specs_from_config(ClassifyConfig(models=["svm-rbf", "mlp"], samplings=["none", "over"]))
    assert [s.label for s in specs] == [
        "svm_rbf/none", "svm_rbf/oversample", "mlp_1hidden/none", "mlp_1hidden/oversample"]


# -------------------------
# Reporting
# -------------------------

def fake(kind, sampling, acc, feature_set="all", control="none"):
    trials = [TrialResult(0, acc, acc / 2, [[1]], {})]
    return ExperimentResult(ModelSpec(kind, sampling), trials, acc, 0.0, acc / 2, control, feature_set)


def test_best_of_layout():
    results = [
        fake("svm_rbf", "none", 0.80),
        fake("svm_linear", "none", 0.75),
        fake("mlp_1hidden", "none", 0.70),
        fake("mlp_1hidden", "oversample", 0.60),
        fake("svm_rbf", "none", 0.78, feature_set="selected"),
        fake("svm_rbf", "none", 0.36, control="shuffled_features"),
        fake("svm_rbf", "none", 0.31, control="shuffled_labels"),
        fake("svm_linear", "none", 0.40, control="shuffled_labels"),
    ]
    table = best_of(results)
    assert list(table.columns) == RESULT_COLUMNS
    assert table["avg accuracy"].tolist() == [0.80, 0.75, 0.70, 0.78, 0.36, 0.40]
    assert table["control"].tolist()[-2:] == ["shuffled_features", "shuffled_labels"]


@pytest.mark.parametrize("selected, representative", [(0.78, True), (0.70, False), (0.82, True)])
def test_selection_representative(selected, representative):
    results = [fake("svm_rbf", "none", 0.80), fake("svm_rbf", "none", selected, feature_set="selected")]
    out = selection_representative(results)
    assert out["difference"] == pytest.approx(selected - 0.80)
    assert out["selection_representative"] is representative


def test_selection_representative_without_selected_runs():
    out = selection_representative([fake("svm_rbf", "none", 0.8)])
    assert out["selection_representative"] is False
