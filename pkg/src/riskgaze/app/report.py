"""
Human-readable run report, rebuilt from the files of a run directory:
summary/report.md with cohort, statistics, selection and classification
tables, and summary/accuracy.png.
"""

from __future__ import annotations

import logging
import math
from typing import Any, Dict, List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from .run_dir import RunDir, read_json, read_table  # noqa: E402

logger = logging.getLogger(__name__)

CHANCE = 1.0 / 3.0


def _cell(v: Any) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.4g}"
    return str(v)


def markdown_table(df: pd.DataFrame) -> str:
    if df.empty:
        return "_none_\n"
    cols = [str(c) for c in df.columns]
    lines = ["| " + " | ".join(cols) + " |", "|" + "|".join("---" for _ in cols) + "|"]
    for row in df.itertuples(index=False):
        lines.append("| " + " | ".join(_cell(v) for v in row) + " |")
    return "\n".join(lines) + "\n"


def _listing(items: List[Dict[str, str]]) -> pd.DataFrame:
    return pd.DataFrame(items, columns=["feature", "direction"])


def accuracy_chart(experiments: pd.DataFrame, path, meta: Dict[str, Any] | None = None) -> None:
    """
    Bar per (feature set, model, sampling); controls drawn as a band.
    `meta` (config hash, seed) goes into the PNG Description chunk.
    """
    real = experiments[experiments["control"] == "none"]
    controls = experiments[experiments["control"] != "none"]

    fig, ax = plt.subplots(figsize=(10, 5), dpi=100)
    labels = [f"{r['feature_set']}\n{r['model']}\n{r['sampling method']}" for _, r in real.iterrows()]
    ax.bar(range(len(real)), real["avg accuracy"], yerr=real["std. accuracy"],
           color=["#4C72B0" if fs == "all" else "#55A868" for fs in real["feature_set"]], capsize=3)
    if not controls.empty:
        ax.axhspan(controls["avg accuracy"].min(), controls["avg accuracy"].max(),
                   color="#C44E52", alpha=0.2, label="randomization controls")
    ax.axhline(CHANCE, color="grey", linestyle="--", linewidth=1, label="chance")
    ax.set_xticks(range(len(real)))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("avg balanced accuracy")
    ax.grid(axis="y", alpha=0.2, linestyle="--")
    ax.legend(loc="lower right")
    fig.tight_layout()
    stamp = " ".join(f"{k}={v}" for k, v in (meta or {}).items())
    fig.savefig(path, metadata={"Software": None, "Description": stamp or None})
    plt.close(fig)


def render_markdown(run: RunDir) -> str:
    summary = read_json(run.path("summary", "summary.json"))
    stats = read_json(run.path("stats", "stat_summary.json"))
    selected = read_table(run.path("selection", "selected_features.csv"))
    best = read_table(run.path("models", "best_of.csv"))
    cls = summary["classification"]

    out = [
        "# riskgaze run report\n",
        f"config hash `{run.config_hash}`, seed {run.seed}\n",
        "## Cohort\n",
        markdown_table(pd.DataFrame(summary["cohort"])),
        f"Channels: {', '.join(summary['channels'])}. "
        f"{summary['n_segments']} segments x {summary['n_features']} features.\n",
        "## Significant features\n",
        f"One-way ANOVA at the Bonferroni-corrected alpha {stats['corrected_alpha']:.4g} "
        f"({stats['n_tests']} tests) plus at least one significant post-hoc t-test.\n",
        markdown_table(_listing(stats["significant"])),
        "### Subject-free features (risk x subject interaction, no subject effect)\n",
        markdown_table(_listing(stats["subject_free"])),
        "### Significant at the subject level (repeated measures)\n",
        markdown_table(_listing(stats["repeated_measures"])),
        f"_{stats['caveat']}._\n",
        "## Selected features\n",
        f"Stable methods: {', '.join(summary['selection']['stable_methods']) or 'none'}; "
        f"cap {summary['selection']['cap']}.\n",
        markdown_table(selected[["feature", "direction", "bts", "votes", "mean_rank"]]
                       if not selected.empty else selected),
        "## Classification\n",
        markdown_table(best),
        f"Best all-feature accuracy {_cell(cls['best_all_accuracy'])}, best selected-feature "
        f"accuracy {_cell(cls['best_selected_accuracy'])}: selection representative = "
        f"{cls['selection_representative']} (tolerance {cls['tolerance']}).\n",
        "![accuracy](accuracy.png)\n",
        "## Quality\n",
        markdown_table(pd.DataFrame(sorted(summary["quality"].items()), columns=["counter", "total"])),
    ]
    return "\n".join(out)


def write_report(run: RunDir) -> None:
    run.write_text("summary", "report.md", render_markdown(run))
    accuracy_chart(read_table(run.path("models", "experiments.csv")), run.path("summary", "accuracy.png"),
                   run.meta)
    logger.info("wrote %s", run.path("summary", "report.md"))
