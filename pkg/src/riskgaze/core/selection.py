"""
Stability-validated feature selection.

Every (run, fold, method) scores the features on the training part of a
stratified fold and keeps the top-t fraction for each t in the threshold
grid. From those sets:

  JI(method)          mean pairwise Jaccard similarity of the top-10% sets
                      over all fold-runs
  BTS(method, f)      fraction of (run, fold, threshold) triples in which f
                      was selected by the method (cross-threshold frequency)

Methods with JI >= ji_min are stable. A stable method votes for f when
BTS(method, f) >= bts_min. The final set holds the features with at least
m_min votes and mean BTS >= bts_min, ordered by mean rank, pruned for
|r| > corr_prune (the higher-BTS member survives) and capped at
ceil(top_fraction * n_features).
"""

from __future__ import annotations

import logging
import math
from itertools import combinations
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.model_selection import StratifiedKFold

from ..selectors.chi2 import Chi2Selector
from ..selectors.f_score import FScoreSelector
from ..selectors.mrmr import MRMRSelector
from ..selectors.mutual_info import MutualInfoSelector
from ..selectors.relieff import ReliefFSelector
from ..selectors.variance_ratio import VarianceRatioSelector
from .errors import UnstratifiableFold
from .models import RISK_ORDER, RiskLabel, SelectionReport, SelectorScore
from .stats import direction_order

logger = logging.getLogger(__name__)

SELECTOR_REGISTRY = {
    "f_score": FScoreSelector,
    "mutual_info": MutualInfoSelector,
    "chi2": Chi2Selector,
    "relieff": ReliefFSelector,
    "mrmr": MRMRSelector,
    "variance_ratio": VarianceRatioSelector,
}


def _selector(method: str, params: Optional[Dict] = None):
    cls = SELECTOR_REGISTRY.get(method)
    if cls is None:
        raise ValueError(f"unknown selection method {method!r}; expected one of {sorted(SELECTOR_REGISTRY)}")
    return cls(params)


def ranks_from_scores(scores: np.ndarray, names: Sequence[str]) -> np.ndarray:
    """1 = best. Exact score ties are broken by feature name."""
    name_rank = np.argsort(np.argsort(np.asarray(names, dtype=object), kind="stable"), kind="stable")
    order = np.lexsort((name_rank, -np.asarray(scores, dtype=float)))
    ranks = np.empty(len(order), dtype=int)
    ranks[order] = np.arange(1, len(order) + 1)
    return ranks


def score_features(
    method: str,
    X,
    y,
    feature_names: Optional[Sequence[str]] = None,
    params: Optional[Dict] = None,
) -> SelectorScore:
    """
    Score every column of X against y. Columns are presented to the scorer
    in feature-name order, so the result does not depend on column order.
    """
    if isinstance(X, pd.DataFrame):
        feature_names = list(X.columns) if feature_names is None else list(feature_names)
        X = X.to_numpy(dtype=float)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(X.shape[1])]
    if len(names) != X.shape[1]:
        raise ValueError(f"{len(names)} names for {X.shape[1]} columns")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature matrix contains missing or non-finite values")
    if np.unique(y).size < 2:
        raise ValueError("need at least two classes to score features")

    perm = np.argsort(np.asarray(names, dtype=object), kind="stable")
    sorted_scores = _selector(method, params).score(X[:, perm], y)
    scores = np.empty_like(sorted_scores)
    scores[perm] = sorted_scores

    return SelectorScore(
        method=method,
        scores=scores,
        ranks=ranks_from_scores(scores, names),
        feature_names=tuple(names),
    )


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def mean_pairwise_jaccard(sets: Sequence[set]) -> float:
    pairs = list(combinations(sets, 2))
    if not pairs:
        return 1.0
    return float(np.mean([jaccard(a, b) for a, b in pairs]))


def top_k(fraction: float, n_features: int) -> int:
    return max(1, math.ceil(fraction * n_features - 1e-9))


def _fold_scores(X, y, names, train_idx, methods, params_by_method) -> Dict[str, np.ndarray]:
    return {
        m: score_features(m, X[train_idx], y[train_idx], names, params_by_method.get(m)).ranks
        for m in methods
    }


def _prune_correlated(candidates: List[str], X: pd.DataFrame, bts: Dict[str, float],
                      mean_rank: Dict[str, float], threshold: float) -> tuple[List[str], List[str]]:
    if len(candidates) < 2:
        return list(candidates), []
    corr = X[candidates].corr().abs().fillna(0.0)
    kept: List[str] = []
    pruned: List[str] = []
    for f in sorted(candidates, key=lambda c: (-bts[c], mean_rank[c], c)):
        if any(corr.at[f, g] > threshold for g in kept):
            pruned.append(f)
        else:
            kept.append(f)
    return kept, pruned


def stability_run(
    X: pd.DataFrame,
    y,
    methods: Sequence[str] = tuple(SELECTOR_REGISTRY),
    k_folds: int = 10,
    runs: int = 2,
    threshold_grid: Sequence[float] = (0.05, 0.10, 0.15, 0.20),
    bts_min: float = 0.5,
    m_min: Optional[int] = None,
    ji_min: float = 0.4,
    top_fraction: float = 0.10,
    corr_prune: float = 0.95,
    seed: int = 0,
    n_jobs: int = 1,
    params_by_method: Optional[Dict[str, Dict]] = None,
) -> SelectionReport:
    names = [str(c) for c in X.columns]
    Xv = X.to_numpy(dtype=float)
    y = np.asarray(y)
    n = len(names)
    params_by_method = params_by_method or {}

    _, counts = np.unique(y, return_counts=True)
    if counts.size < 2 or counts.min() < k_folds:
        raise UnstratifiableFold(
            f"{k_folds} stratified folds need >= {k_folds} samples per class, got {counts.tolist()}")

    folds = []
    for r in range(runs):
        skf = StratifiedKFold(n_splits=k_folds, shuffle=True, random_state=seed + r)
        folds.extend(train_idx for train_idx, _ in skf.split(Xv, y))

    fold_ranks = Parallel(n_jobs=n_jobs)(
        delayed(_fold_scores)(Xv, y, names, idx, list(methods), params_by_method) for idx in folds
    )

    ks = {t: top_k(t, n) for t in threshold_grid}
    k_top = top_k(top_fraction, n)

    frequency: Dict[str, Dict[str, float]] = {}
    jaccard_index: Dict[str, float] = {}
    bts_by_method: Dict[str, Dict[str, float]] = {}
    rank_sum: Dict[str, np.ndarray] = {}

    for m in methods:
        top_sets: List[set] = []
        hits = np.zeros(n)
        top_hits = np.zeros(n)
        ranks_total = np.zeros(n)
        for fr in fold_ranks:
            ranks = fr[m]
            ranks_total += ranks
            top = ranks <= k_top
            top_hits += top
            top_sets.append({names[j] for j in np.flatnonzero(top)})
            for k in ks.values():
                hits += ranks <= k
        frequency[m] = dict(zip(names, (top_hits / len(fold_ranks)).tolist()))
        jaccard_index[m] = mean_pairwise_jaccard(top_sets)
        bts_by_method[m] = dict(zip(names, (hits / (len(fold_ranks) * len(ks))).tolist()))
        rank_sum[m] = ranks_total / len(fold_ranks)

    stable = [m for m in methods if jaccard_index[m] >= ji_min]
    basis = stable or list(methods)
    mean_rank = dict(zip(names, np.mean([rank_sum[m] for m in basis], axis=0).tolist()))
    bts = {
        f: float(np.mean([bts_by_method[m][f] for m in stable])) if stable else 0.0
        for f in names
    }
    votes = {f: sum(bts_by_method[m][f] >= bts_min for m in stable) for f in names}
    need = m_min if m_min is not None else max(1, math.ceil(len(stable) / 2))

    candidates = [f for f in names if stable and votes[f] >= need and bts[f] >= bts_min]
    kept, pruned = _prune_correlated(candidates, X, bts, mean_rank, corr_prune)
    cap = top_k(top_fraction, n)
    final_set = sorted(kept, key=lambda f: (mean_rank[f], f))[:cap]

    logger.info(
        "%d features, %d fold-runs: stable methods %s, %d candidates, "
        "%d pruned, final set %d (cap %d)",
        n, len(fold_ranks), stable, len(candidates), len(pruned), len(final_set), cap,
    )

    return SelectionReport(
        feature_names=names,
        methods=list(methods),
        frequency=frequency,
        jaccard_index=jaccard_index,
        bts=bts,
        bts_by_method=bts_by_method,
        mean_rank=mean_rank,
        votes=votes,
        stable_methods=stable,
        final_set=final_set,
        cap=cap,
        pruned=pruned,
    )


def explain_selection(report: SelectionReport, df: pd.DataFrame) -> pd.DataFrame:
    """Group means and direction strings for every selected feature, in final-set order."""
    columns = ["feature", "mean_L", "mean_M", "mean_H", "direction", "direction_tie",
               "bts", "votes", "mean_rank"]
    if not report.final_set:
        return pd.DataFrame(columns=columns)

    labels = df["risk_label"].map(lambda v: RiskLabel.parse(v).short)
    rows = []
    for f in report.final_set:
        means = {lbl.short: float(df.loc[labels == lbl.short, f].mean())
                 for lbl in RISK_ORDER if (labels == lbl.short).any()}
        d = direction_order(means)
        rows.append({
            "feature": f,
            "mean_L": means.get("L", math.nan),
            "mean_M": means.get("M", math.nan),
            "mean_H": means.get("H", math.nan),
            "direction": d.order,
            "direction_tie": d.tie,
            "bts": report.bts[f],
            "votes": report.votes[f],
            "mean_rank": report.mean_rank[f],
        })
    return pd.DataFrame(rows, columns=columns)


def selection_to_frame(report: SelectionReport) -> pd.DataFrame:
    rows = []
    for f in report.feature_names:
        row = {"feature": f, "bts": report.bts[f], "votes": report.votes[f],
               "mean_rank": report.mean_rank[f], "selected": f in report.final_set,
               "pruned": f in report.pruned}
        for m in report.methods:
            row[f"freq_{m}"] = report.frequency[m][f]
            row[f"bts_{m}"] = report.bts_by_method[m][f]
        rows.append(row)
    return pd.DataFrame(rows)


def selection_to_dict(report: SelectionReport) -> Dict:
    return {
        "feature_names": report.feature_names,
        "methods": report.methods,
        "jaccard_index": report.jaccard_index,
        "stable_methods": report.stable_methods,
        "final_set": report.final_set,
        "cap": report.cap,
        "pruned": report.pruned,
        "bts": report.bts,
        "votes": report.votes,
        "mean_rank": report.mean_rank,
        "frequency": report.frequency,
        "bts_by_method": report.bts_by_method,
    }


def selection_from_dict(d: Dict) -> SelectionReport:
    return SelectionReport(**{k: d[k] for k in (
        "feature_names", "methods", "frequency", "jaccard_index", "bts", "bts_by_method",
        "mean_rank", "votes", "stable_methods", "final_set", "cap", "pruned")})
