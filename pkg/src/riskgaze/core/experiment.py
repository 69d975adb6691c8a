"""
Classification protocol: repeated stratified trials of

    split -> resample(train) -> scale -> grid search -> fit -> evaluate

with optional randomization controls, aggregated into ExperimentResults.
"""

from __future__ import annotations

import logging
import math
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from imblearn.over_sampling import RandomOverSampler
from imblearn.under_sampling import RandomUnderSampler
from joblib import Parallel, delayed
from sklearn.model_selection import StratifiedKFold, train_test_split
from sklearn.preprocessing import MinMaxScaler

from ..classifiers.mlp import OneHiddenLayerMLP
from ..classifiers.svm import SVMClassifier
from .config import ClassifyConfig, canonical_model, canonical_sampling
from .errors import TooFewSamples
from .metrics import aggregate_trials, balanced_accuracy, compute_metrics, confusion
from .models import ExperimentResult, ModelSpec, TrialResult

logger = logging.getLogger(__name__)

MODEL_REGISTRY = {
    "mlp_1hidden": OneHiddenLayerMLP,
    "svm_linear": SVMClassifier,
    "svm_rbf": SVMClassifier,
}
CONTROLS = ("none", "shuffled_labels", "shuffled_features")


# -------------------------
# Data handling
# -------------------------

def split_stratified(y, test_fraction: float = 0.25, seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Index arrays (train, test) preserving class proportions."""
    y = np.asarray(y)
    _, counts = np.unique(y, return_counts=True)
    if counts.min() < 4:
        raise TooFewSamples(f"stratified split needs >= 4 samples per class, got {counts.tolist()}")
    train_idx, test_idx = train_test_split(
        np.arange(len(y)), test_size=test_fraction, stratify=y, random_state=seed)
    return np.sort(train_idx), np.sort(test_idx)


def resample(X, y, mode: str = "none", seed: int = 0):
    """Random duplication up to the largest class, or removal down to the smallest."""
    mode = canonical_sampling(mode)
    if mode == "none":
        return X, y
    sampler = (RandomOverSampler(random_state=seed) if mode == "oversample"
               else RandomUnderSampler(random_state=seed))
    return sampler.fit_resample(X, y)


class TrainScaler:
    """
    Per-feature min-max map fitted on the training set. Constant training
    columns map to 0.5. Test values are not clipped.
    """

    def __init__(self):
        self._scaler = MinMaxScaler()
        self._offset: Optional[np.ndarray] = None

    def fit(self, X) -> "TrainScaler":
        X = np.asarray(X, dtype=float)
        self._scaler.fit(X)
        self._offset = np.where(np.ptp(X, axis=0) == 0, 0.5, 0.0)
        return self

    def transform(self, X) -> np.ndarray:
        return self._scaler.transform(np.asarray(X, dtype=float)) + self._offset

    @property
    def data_min_(self) -> np.ndarray:
        return self._scaler.data_min_

    @property
    def data_max_(self) -> np.ndarray:
        return self._scaler.data_max_


def scale_train_test(X_train, X_test):
    scaler = TrainScaler().fit(X_train)
    return scaler.transform(X_train), scaler.transform(X_test), scaler


# -------------------------
# Models
# -------------------------

def build_model(kind: str, hyper: Dict[str, float], seed: int = 0,
                cfg: Optional[ClassifyConfig] = None):
    cfg = cfg or ClassifyConfig()
    kind = canonical_model(kind)
    if kind == "mlp_1hidden":
        params = {**cfg.mlp.model_dump(), "hidden_units": int(hyper["hidden_units"]), "seed": seed}
    else:
        params = {**cfg.svm.model_dump(), "kernel": kind.split("_", 1)[1], "C": float(hyper["C"])}
        if kind == "svm_rbf":
            params["gamma"] = hyper.get("gamma")
    return MODEL_REGISTRY[kind](params)


def train_svm(X, y, kind: str = "linear", C: float = 1.0, gamma: Optional[float] = None,
              cfg: Optional[ClassifyConfig] = None) -> SVMClassifier:
    hyper: Dict[str, float] = {"C": C}
    if gamma is not None:
        hyper["gamma"] = gamma
    return build_model(f"svm_{kind}", hyper, cfg=cfg).fit(X, y)


def train_mlp(X, y, hidden_units: int, seed: int = 0,
              cfg: Optional[ClassifyConfig] = None) -> OneHiddenLayerMLP:
    return build_model("mlp_1hidden", {"hidden_units": hidden_units}, seed, cfg).fit(X, y)


# -------------------------
# Grids
# -------------------------

def mlp_grid(n_features: int, size: int = 10) -> List[int]:
    """10 evenly spaced hidden-unit counts from n/10 + 1 to n + n/10 + 1."""
    low = n_features // 10 + 1
    return sorted({int(v) for v in np.rint(np.linspace(low, n_features + low, size))})


def coarse_c_grid(extended: bool = False) -> List[float]:
    grid = [round(c, 2) for c in np.linspace(0.1, 1.0, 10)]
    if extended:
        grid += [2.0, 5.0, 10.0, 20.0, 50.0, 100.0]
    return grid


def fine_c_grid(best: float) -> List[float]:
    """Narrow to 0.01 steps within +-0.1 of the coarse winner (or +-50% above 1)."""
    if best <= 1.0:
        lo, hi = max(0.01, best - 0.1), min(1.0, best + 0.1)
        return [round(c, 2) for c in np.arange(lo, hi + 1e-9, 0.01)]
    return [round(best * f, 4) for f in np.arange(0.5, 1.5 + 1e-9, 0.1)]


def gamma_grid(X_train, multipliers: Sequence[float] = (0.1, 1.0, 10.0)) -> List[float]:
    X_train = np.asarray(X_train, dtype=float)
    var = float(X_train.var())
    base = 1.0 / (X_train.shape[1] * var) if var > 0 else 1.0
    return [base * m for m in multipliers]


def _cv_score(make_model, X, y, folds) -> float:
    labels = np.unique(y)
    scores = []
    for tr, va in folds:
        model = make_model().fit(X[tr], y[tr])
        scores.append(balanced_accuracy(confusion(y[va], model.predict(X[va]), labels=labels)))
    return float(np.mean(scores))


def _best(cands: List[Tuple[float, Tuple, Dict[str, float]]]) -> Tuple[float, Dict[str, float]]:
    """Highest score; ties go to the smallest tie key."""
    score, _, hyper = min(cands, key=lambda c: (-c[0], c[1]))
    return score, hyper


def _search_c(make, X, y, folds, extended: bool, extra: Dict[str, float]):
    def run(grid):
        return [(_cv_score(lambda c=c: make({**extra, "C": c}), X, y, folds), (c,), {**extra, "C": c})
                for c in grid]

    coarse = run(coarse_c_grid(extended))
    _, best = _best(coarse)
    fine = run([c for c in fine_c_grid(best["C"]) if c not in {c_[2]["C"] for c_ in coarse}])
    return _best(coarse + fine)


def grid_search(X, y, kind: str, seed: int = 0, cfg: Optional[ClassifyConfig] = None) -> Dict[str, float]:
    """
    Stratified CV with min(cv_splits, smallest class) folds, mean balanced
    accuracy as the criterion. Ties go to fewer hidden units / smaller C /
    smaller gamma.
    """
    cfg = cfg or ClassifyConfig()
    kind = canonical_model(kind)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    _, counts = np.unique(y, return_counts=True)
    n_splits = min(cfg.cv_splits, int(counts.min()))
    if n_splits < 2:
        raise TooFewSamples(f"grid search needs >= 2 samples per class, got {counts.tolist()}")
    folds = list(StratifiedKFold(n_splits=n_splits, shuffle=True, random_state=seed).split(X, y))

    def make(hyper):
        return build_model(kind, hyper, seed, cfg)

    if kind == "mlp_1hidden":
        cands = [(_cv_score(lambda h=h: make({"hidden_units": h}), X, y, folds), (h,),
                  {"hidden_units": h}) for h in mlp_grid(X.shape[1])]
        _, best = _best(cands)
    elif kind == "svm_linear":
        _, best = _search_c(make, X, y, folds, cfg.extended_c_grid, {})
    else:
        cands = []
        for g in sorted(gamma_grid(X, cfg.gamma_multipliers)):
            score, hyper = _search_c(make, X, y, folds, cfg.extended_c_grid, {"gamma": g})
            cands.append((score, (hyper["C"], g), hyper))
        _, best = _best(cands)

    logger.debug("%s grid search -> %s", kind, best)
    return best


def fit_final(X, y, spec: ModelSpec, seed: int = 0, cfg: Optional[ClassifyConfig] = None):
    """
    Resample, scale and grid-search on the whole table, then fit once.
    Returns (model, scaler, hyper).
    """
    cfg = cfg or ClassifyConfig()
    X, y = _as_arrays(X, y)
    X_tr, y_tr = resample(X, y, spec.sampling, seed)
    scaler = TrainScaler().fit(X_tr)
    X_tr = scaler.transform(X_tr)
    hyper = dict(spec.hyper) or grid_search(X_tr, y_tr, spec.kind, seed, cfg)
    model = build_model(spec.kind, hyper, seed, cfg).fit(X_tr, y_tr)
    logger.info("%s fitted on %d samples with %s", spec.label, len(y_tr), hyper)
    return model, scaler, hyper


# -------------------------
# Trials
# -------------------------

def trial_seeds(master_seed: int, n_trials: int) -> List[int]:
    children = np.random.SeedSequence(master_seed).spawn(n_trials)
    return [int(c.generate_state(1)[0]) for c in children]


def apply_control(X: np.ndarray, y: np.ndarray, control: str, rng: np.random.Generator):
    if control == "shuffled_labels":
        return X, rng.permutation(y)
    if control == "shuffled_features":
        return rng.permuted(X, axis=0), y
    if control != "none":
        raise ValueError(f"unknown control {control!r}")
    return X, y


def run_trial(X: np.ndarray, y: np.ndarray, spec: ModelSpec, trial_index: int, seed: int,
              cfg: ClassifyConfig, control: str = "none") -> TrialResult:
    rng = np.random.default_rng(seed)
    X, y = apply_control(X, y, control, rng)
    labels = np.unique(y)

    train_idx, test_idx = split_stratified(y, cfg.test_fraction, seed)
    X_tr, y_tr = resample(X[train_idx], y[train_idx], spec.sampling, seed)
    X_tr, X_te, _ = scale_train_test(X_tr, X[test_idx])

    hyper = dict(spec.hyper) or grid_search(X_tr, y_tr, spec.kind, seed, cfg)
    model = build_model(spec.kind, hyper, seed, cfg).fit(X_tr, y_tr)
    m = compute_metrics(y[test_idx], model.predict(X_te), labels=labels)

    return TrialResult(
        trial_index=trial_index,
        balanced_accuracy=m["balanced_accuracy"],
        mcc=m["mcc"],
        confusion=m["confusion"],
        chosen_hyper={k: float(v) for k, v in hyper.items()},
    )


def _as_arrays(X, y) -> Tuple[np.ndarray, np.ndarray]:
    X = X.to_numpy(dtype=float) if isinstance(X, pd.DataFrame) else np.asarray(X, dtype=float)
    return X, np.asarray(y, dtype=int)


def run_experiment(
    X,
    y,
    spec: ModelSpec,
    n_trials: int = 10,
    master_seed: int = 0,
    cfg: Optional[ClassifyConfig] = None,
    control: str = "none",
    feature_set: str = "all",
    n_jobs: Optional[int] = None,
) -> ExperimentResult:
    cfg = cfg or ClassifyConfig()
    spec = replace(spec, kind=canonical_model(spec.kind), sampling=canonical_sampling(spec.sampling))
    X, y = _as_arrays(X, y)
    seeds = trial_seeds(master_seed, n_trials)

    trials = Parallel(n_jobs=n_jobs if n_jobs is not None else cfg.n_jobs)(
        delayed(run_trial)(X, y, spec, i, s, cfg, control) for i, s in enumerate(seeds)
    )
    trials = sorted(trials, key=lambda t: t.trial_index)
    agg = aggregate_trials(trials)

    logger.info("%s features=%s control=%s: acc %.3f +- %.3f, mcc %.3f",
                spec.label, feature_set, control,
                agg["avg_accuracy"], agg["std_accuracy"], agg["avg_mcc"])
    return ExperimentResult(
        spec=spec,
        trials=trials,
        control=control,
        feature_set=feature_set,
        **agg,
    )


def randomization_controls(X, y, spec: ModelSpec, master_seed: int = 0,
                           cfg: Optional[ClassifyConfig] = None, n_trials: Optional[int] = None,
                           feature_set: str = "all") -> Tuple[ExperimentResult, ExperimentResult]:
    """(shuffled-label result, shuffled-feature result), reshuffled every trial."""
    cfg = cfg or ClassifyConfig()
    n = n_trials or cfg.n_trials
    labels = run_experiment(X, y, spec, n, master_seed, cfg, "shuffled_labels", feature_set)
    features = run_experiment(X, y, spec, n, master_seed, cfg, "shuffled_features", feature_set)
    return labels, features


def specs_from_config(cfg: ClassifyConfig) -> List[ModelSpec]:
    return [ModelSpec(kind=m, sampling=s) for m in cfg.models for s in cfg.samplings]


# -------------------------
# Reporting
# -------------------------

RESULT_COLUMNS = ["feature_set", "control", "sampling method", "model",
                  "avg accuracy", "std. accuracy", "avg MCC"]


def result_row(r: ExperimentResult) -> Dict[str, Any]:
    return {
        "feature_set": r.feature_set,
        "control": r.control,
        "sampling method": r.spec.sampling,
        "model": r.spec.kind,
        "avg accuracy": round(r.avg_accuracy, 6),
        "std. accuracy": round(r.std_accuracy, 6),
        "avg MCC": round(r.avg_mcc, 6),
    }


def _ranked(results: Sequence[ExperimentResult]) -> List[ExperimentResult]:
    return sorted(results, key=lambda r: (-r.avg_accuracy, r.spec.kind, r.spec.sampling))


def best_of(results: Sequence[ExperimentResult], top: int = 3) -> pd.DataFrame:
    """
    Top `top` configurations for all features and for selected features,
    then the best shuffled-feature and shuffled-label controls.
    """
    rows = []
    for fs in ("all", "selected"):
        pool = [r for r in results if r.control == "none" and r.feature_set == fs]
        rows += [result_row(r) for r in _ranked(pool)[:top]]
    for control in ("shuffled_features", "shuffled_labels"):
        pool = [r for r in results if r.control == control]
        rows += [result_row(r) for r in _ranked(pool)[:1]]
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def selection_representative(results: Sequence[ExperimentResult],
                             tolerance: float = 0.03) -> Dict[str, Any]:
    best = {}
    for fs in ("all", "selected"):
        pool = _ranked([r for r in results if r.control == "none" and r.feature_set == fs])
        best[fs] = pool[0].avg_accuracy if pool else math.nan
    diff = best["selected"] - best["all"]
    return {
        "best_all_accuracy": best["all"],
        "best_selected_accuracy": best["selected"],
        "difference": diff,
        "tolerance": tolerance,
        "selection_representative": bool(abs(diff) <= tolerance) if math.isfinite(diff) else False,
    }


def experiment_to_dict(r: ExperimentResult) -> Dict[str, Any]:
    return {
        "spec": {"kind": r.spec.kind, "sampling": r.spec.sampling, "hyper": dict(r.spec.hyper)},
        "feature_set": r.feature_set,
        "control": r.control,
        "avg_accuracy": r.avg_accuracy,
        "std_accuracy": r.std_accuracy,
        "avg_mcc": r.avg_mcc,
        "trials": [
            {
                "trial_index": t.trial_index,
                "balanced_accuracy": t.balanced_accuracy,
                "mcc": t.mcc,
                "confusion": t.confusion,
                "chosen_hyper": t.chosen_hyper,
            }
            for t in r.trials
        ],
    }


def experiment_from_dict(d: Dict[str, Any]) -> ExperimentResult:
    spec = ModelSpec(kind=d["spec"]["kind"], sampling=d["spec"]["sampling"],
                     hyper=tuple(sorted(d["spec"].get("hyper", {}).items())))
    trials = [TrialResult(**t) for t in d["trials"]]
    return ExperimentResult(spec=spec, trials=trials, avg_accuracy=d["avg_accuracy"],
                            std_accuracy=d["std_accuracy"], avg_mcc=d["avg_mcc"],
                            control=d.get("control", "none"), feature_set=d.get("feature_set", "all"))
