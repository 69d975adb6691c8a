"""
Hypothesis tests over the functional table.

Risk levels are treated as nominal. The one-way ANOVA / Welch t-test pair
uses a Bonferroni-corrected threshold alpha / n_features; the two-factor
type-III ANOVA and the subject-level repeated-measures test address the
non-independence of segments cut from the same interview.

The usual ANOVA assumptions (normality, homogeneity) are not checked;
segment functionals rarely satisfy them, so results are indicative.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats as sps

from .errors import (
    FewerThanTwoSubjectsPerGroup,
    RankDeficientDesign,
    ZeroVarianceBoth,
    ZeroWithinVariance,
)
from .functionals import feature_columns
from .models import (
    RISK_ORDER,
    FeatureStats,
    PairwiseTest,
    RiskLabel,
    StatReport,
)

logger = logging.getLogger(__name__)

PAIRS: Tuple[Tuple[str, str], ...] = (("L", "H"), ("M", "H"), ("L", "M"))
_ZERO = 1e-12


def bonferroni_alpha(alpha: float = 0.05, n_tests: int = 210) -> float:
    return alpha / n_tests


# -------------------------
# One-way ANOVA / Welch t
# -------------------------

def anova_oneway(groups: Sequence[Sequence[float]]) -> Tuple[float, float]:
    """
    Classical F = MSB / MSW with df (k - 1, N - k).

    All-equal responses give (0, 1). Zero within-group variance with a
    between-group difference raises ZeroWithinVariance.
    """
    arrays = [np.asarray(g, dtype=float) for g in groups]
    if len(arrays) < 2 or any(a.size < 2 for a in arrays):
        raise ValueError("anova needs >= 2 groups of >= 2 samples")

    grand = np.concatenate(arrays).mean()
    ssb = sum(a.size * (a.mean() - grand) ** 2 for a in arrays)
    ssw = sum(((a - a.mean()) ** 2).sum() for a in arrays)
    scale = max(1.0, float(np.abs(np.concatenate(arrays)).max())) ** 2
    if ssw <= _ZERO * scale:
        if ssb <= _ZERO * scale:
            return 0.0, 1.0
        raise ZeroWithinVariance("zero within-group variance with distinct group means")

    F, p = sps.f_oneway(*arrays)
    return float(F), float(p)


def ttest_two_tailed(a: Sequence[float], b: Sequence[float]) -> Tuple[float, float]:
    """Welch's unequal-variance t-test, two-tailed."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("t-test needs >= 2 samples per group")
    if a.var(ddof=1) <= _ZERO and b.var(ddof=1) <= _ZERO:
        raise ZeroVarianceBoth("both samples have zero variance")
    res = sps.ttest_ind(a, b, equal_var=False)
    return float(res.statistic), float(res.pvalue)


def f_pvalue(F: float, df1: float, df2: float) -> float:
    return float(sps.f.sf(F, df1, df2))


def t_pvalue_two_tailed(t: float, df: float) -> float:
    return float(2.0 * sps.t.sf(abs(t), df))


# -------------------------
# Direction strings
# -------------------------

class Direction(NamedTuple):
    order: str
    tie: bool


def direction_order(means: Mapping) -> Direction:
    """
    Labels sorted by mean, descending, e.g. "L>M>H". Exact ties keep the
    L, M, H order and set the tie flag.
    """
    keyed: Dict[str, float] = {}
    for k, v in means.items():
        keyed[RiskLabel.parse(k).short] = float(v)
    order = [lbl.short for lbl in RISK_ORDER if lbl.short in keyed]
    ranked = sorted(order, key=lambda s: -keyed[s])       # stable: ties keep L, M, H
    vals = [keyed[s] for s in ranked]
    tie = any(a == b for a, b in zip(vals, vals[1:]))
    return Direction(">".join(ranked), tie)


# -------------------------
# Two-factor type-III ANOVA
# -------------------------

class TwoFactorResult(NamedTuple):
    risk_p: float
    subject_p: float
    interaction_p: float
    risk_F: float
    subject_F: float
    interaction_F: float
    df: Tuple[int, int, int, int]          # risk, subject, interaction, residual


def _sum_coding(codes: np.ndarray, n_levels: int) -> np.ndarray:
    out = np.zeros((len(codes), n_levels - 1))
    for j in range(n_levels - 1):
        out[codes == j, j] = 1.0
    out[codes == n_levels - 1, :] = -1.0
    return out


def subject_slots(risk: Sequence, subject: Sequence) -> np.ndarray:
    """Index of each subject within its risk level (crossed coding of the nested factor)."""
    frame = pd.DataFrame({"risk": [str(r) for r in risk], "subject": [str(s) for s in subject]})
    slots: Dict[Tuple[str, str], int] = {}
    for r, grp in frame.groupby("risk", sort=True):
        for i, s in enumerate(sorted(grp["subject"].unique())):
            slots[(r, s)] = i
    return np.array([slots[(r, s)] for r, s in zip(frame["risk"], frame["subject"])], dtype=int)


@dataclass
class TwoFactorDesign:
    """
    Sum-to-zero design for risk x subject-slot with interaction. Columns that
    are linearly dependent (empty cells) are dropped greedily in the order
    intercept, risk, subject, interaction.
    """
    X: np.ndarray
    groups: Dict[str, np.ndarray]          # effect -> kept column indices
    df_resid: int

    @classmethod
    def build(cls, risk: Sequence, subject: Sequence) -> "TwoFactorDesign":
        risk_codes = pd.factorize(pd.Series([str(r) for r in risk]), sort=True)[0]
        slots = subject_slots(risk, subject)
        k = int(risk_codes.max()) + 1
        s = int(slots.max()) + 1
        if k < 2 or s < 2:
            raise RankDeficientDesign(
                f"need >= 2 risk levels and >= 2 subjects per level (got {k}, {s})")

        R = _sum_coding(risk_codes, k)
        S = _sum_coding(slots, s)
        RS = np.einsum("ni,nj->nij", R, S).reshape(len(R), -1)
        blocks = [("intercept", np.ones((len(R), 1))), ("risk", R), ("subject", S), ("interaction", RS)]

        kept_cols: List[np.ndarray] = []
        groups: Dict[str, List[int]] = {name: [] for name, _ in blocks}
        rank = 0
        for name, block in blocks:
            for j in range(block.shape[1]):
                trial = np.column_stack(kept_cols + [block[:, j]])
                r = np.linalg.matrix_rank(trial)
                if r > rank:
                    kept_cols.append(block[:, j])
                    groups[name].append(len(kept_cols) - 1)
                    rank = r
                elif name in ("risk", "subject"):
                    raise RankDeficientDesign(f"{name} main effect is not estimable")

        X = np.column_stack(kept_cols)
        df_resid = len(R) - X.shape[1]
        if df_resid <= 0:
            raise RankDeficientDesign("no residual degrees of freedom")
        return cls(X=X, groups={k_: np.array(v, dtype=int) for k_, v in groups.items()},
                   df_resid=df_resid)

    @staticmethod
    def _sse(X: np.ndarray, y: np.ndarray) -> float:
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ beta
        return float(resid @ resid)

    def test(self, values: Sequence[float]) -> TwoFactorResult:
        y = np.asarray(values, dtype=float)
        sse_full = self._sse(self.X, y)
        mse = sse_full / self.df_resid
        scale = max(1.0, float(np.abs(y).max())) ** 2 * _ZERO * len(y)

        out: Dict[str, Tuple[float, float, int]] = {}
        for effect in ("risk", "subject", "interaction"):
            cols = self.groups[effect]
            df = len(cols)
            if df == 0:
                out[effect] = (math.nan, math.nan, 0)
                continue
            keep = np.setdiff1d(np.arange(self.X.shape[1]), cols)
            ss = max(self._sse(self.X[:, keep], y) - sse_full, 0.0)
            if sse_full <= scale:
                F, p = (0.0, 1.0) if ss <= scale else (math.inf, 0.0)
            else:
                F = (ss / df) / mse
                p = f_pvalue(F, df, self.df_resid)
            out[effect] = (F, p, df)

        return TwoFactorResult(
            risk_p=out["risk"][1],
            subject_p=out["subject"][1],
            interaction_p=out["interaction"][1],
            risk_F=out["risk"][0],
            subject_F=out["subject"][0],
            interaction_F=out["interaction"][0],
            df=(out["risk"][2], out["subject"][2], out["interaction"][2], self.df_resid),
        )


def anova_two_factor_type3(values, risk, subject) -> TwoFactorResult:
    return TwoFactorDesign.build(risk, subject).test(values)


def is_subject_free(result: TwoFactorResult, alpha: float = 0.05) -> bool:
    """Significant risk x subject interaction, non-significant subject effect."""
    if math.isnan(result.interaction_p) or math.isnan(result.subject_p):
        return False
    return result.interaction_p <= alpha and result.subject_p > alpha


# -------------------------
# Subject-level repeated measures
# -------------------------

def repeated_measures_subject_level(values, risk, subject) -> Tuple[float, float]:
    """
    Two-stage test: collapse segments to per-subject means, then a one-way
    ANOVA across risk groups on the subject means.
    """
    frame = pd.DataFrame({
        "value": np.asarray(values, dtype=float),
        "risk": [RiskLabel.parse(r).short for r in risk],
        "subject": [str(s) for s in subject],
    })
    per_subject = frame.groupby(["risk", "subject"], sort=True)["value"].mean().reset_index()
    groups = [g["value"].to_numpy() for _, g in per_subject.groupby("risk", sort=True)]
    if len(groups) < 2 or any(len(g) < 2 for g in groups):
        raise FewerThanTwoSubjectsPerGroup(
            f"subject counts per group: {[len(g) for g in groups]}")
    try:
        return anova_oneway(groups)
    except ZeroWithinVariance:
        return math.inf, 0.0


# -------------------------
# Suite
# -------------------------

def _pairwise(groups: Dict[str, np.ndarray], corrected: float, flags: List[str]) -> Dict[str, PairwiseTest]:
    out: Dict[str, PairwiseTest] = {}
    for a, b in PAIRS:
        if a not in groups or b not in groups:
            continue
        try:
            t, p = ttest_two_tailed(groups[a], groups[b])
        except ZeroVarianceBoth:
            diff = groups[a].mean() - groups[b].mean()
            t, p = (0.0, 1.0) if diff == 0 else (math.copysign(math.inf, diff), 0.0)
            flags.append(f"zero_variance_{a}{b}")
        out[a + b] = PairwiseTest(t=t, p=p, significant=p <= corrected)
    return out


def run_stat_suite(
    df: pd.DataFrame,
    alpha: float = 0.05,
    two_factor_alpha: float = 0.05,
    rm_alpha: float = 0.05,
) -> StatReport:
    """
    Every test on every functional. A feature is "significant" when it
    passes the Bonferroni-corrected ANOVA and at least one of the three
    post-hoc comparisons.
    """
    features = feature_columns(df)
    n_tests = len(features)
    corrected = bonferroni_alpha(alpha, n_tests)
    labels = np.array([RiskLabel.parse(v).short for v in df["risk_label"]])
    subjects = df["subject_id"].astype(str).to_numpy()

    present = [lbl.short for lbl in RISK_ORDER if lbl.short in set(labels)]
    for s in present:
        if np.count_nonzero(labels == s) < 2:
            raise ValueError(f"need >= 2 segments in group {s}")

    try:
        design: Optional[TwoFactorDesign] = TwoFactorDesign.build(labels, subjects)
    except RankDeficientDesign as e:
        logger.warning("two-factor design unusable: %s", e)
        design = None

    rows: List[FeatureStats] = []
    for name in features:
        values = df[name].to_numpy(dtype=float)
        groups = {s: values[labels == s] for s in present}
        flags: List[str] = []

        try:
            F, p = anova_oneway(list(groups.values()))
        except ZeroWithinVariance:
            F, p = math.inf, 0.0
            flags.append("zero_within_variance")

        means = {s: float(g.mean()) for s, g in groups.items()}
        direction = direction_order(means)
        if direction.tie:
            flags.append("direction_tie")

        row = FeatureStats(
            feature=name,
            anova_F=F,
            anova_p=p,
            bonferroni_significant=p <= corrected,
            pairwise=_pairwise(groups, corrected, flags),
            direction=direction.order,
            direction_tie=direction.tie,
            means=means,
            flags=flags,
        )

        if design is not None:
            tf = design.test(values)
            row.risk_p, row.subject_p, row.interaction_p = tf.risk_p, tf.subject_p, tf.interaction_p
            row.subject_free = is_subject_free(tf, two_factor_alpha)
        else:
            flags.append("rank_deficient_design")

        try:
            row.rm_F, row.rm_p = repeated_measures_subject_level(values, labels, subjects)
        except FewerThanTwoSubjectsPerGroup:
            flags.append("rm_too_few_subjects")

        rows.append(row)

    report = StatReport(
        alpha=alpha,
        n_tests=n_tests,
        corrected_alpha=corrected,
        rows=rows,
        anova_significant=[r.feature for r in rows if r.bonferroni_significant],
        significant=[r.feature for r in rows if r.bonferroni_significant and r.posthoc_significant],
        subject_free=[r.feature for r in rows if r.subject_free],
        repeated_measures=[r.feature for r in rows if r.rm_p is not None and r.rm_p <= rm_alpha],
    )
    logger.info(
        "%d functionals: %d ANOVA-significant, %d post-hoc significant, "
        "%d subject-free, %d repeated-measures (corrected alpha %.4g)",
        n_tests, len(report.anova_significant), len(report.significant),
        len(report.subject_free), len(report.repeated_measures), corrected,
    )
    return report


# -------------------------
# Export
# -------------------------

def stat_report_to_frame(report: StatReport) -> pd.DataFrame:
    records = []
    for r in report.rows:
        rec = {
            "feature": r.feature,
            "anova_F": r.anova_F,
            "anova_p": r.anova_p,
            "bonferroni_significant": r.bonferroni_significant,
        }
        for a, b in PAIRS:
            pt = r.pairwise.get(a + b)
            rec[f"t_{a}{b}"] = pt.t if pt else math.nan
            rec[f"p_{a}{b}"] = pt.p if pt else math.nan
            rec[f"sig_{a}{b}"] = pt.significant if pt else False
        rec.update({f"mean_{k}": v for k, v in r.means.items()})
        rec.update({
            "direction": r.direction,
            "direction_tie": r.direction_tie,
            "risk_p": r.risk_p,
            "subject_p": r.subject_p,
            "interaction_p": r.interaction_p,
            "subject_free": r.subject_free,
            "rm_F": r.rm_F,
            "rm_p": r.rm_p,
            "flags": ";".join(r.flags),
        })
        records.append(rec)
    return pd.DataFrame.from_records(records)


def stat_summary(report: StatReport) -> Dict[str, object]:
    def listing(names: List[str]) -> List[Dict[str, str]]:
        return [{"feature": n, "direction": report.row(n).direction} for n in names]

    return {
        "alpha": report.alpha,
        "n_tests": report.n_tests,
        "corrected_alpha": report.corrected_alpha,
        "anova_significant": listing(report.anova_significant),
        "significant": listing(report.significant),
        "subject_free": listing(report.subject_free),
        "repeated_measures": listing(report.repeated_measures),
        "caveat": "normality and homogeneity assumptions are not verified",
    }
