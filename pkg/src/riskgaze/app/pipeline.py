"""
End-to-end orchestration.

    ingest -> signals -> postproc -> featurize -> {stats, select} -> classify

Each stage runs inside `stage(name)` so any failure surfaces as a
StageError carrying the stage name. Expensive stage outputs are cached
with joblib under `paths.cache_dir`, keyed by the stage's config section
and the keys of everything upstream of it.
"""

from __future__ import annotations

import hashlib
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import joblib
import pandas as pd

from ..core.config import PipelineConfig, section_hash
from ..core.errors import ConfigError, StageError
from ..core.experiment import (
    best_of,
    experiment_to_dict,
    randomization_controls,
    result_row,
    run_experiment,
    selection_representative,
    specs_from_config,
    RESULT_COLUMNS,
)
from ..core.functionals import featurize, features_to_frame, split_table
from ..core.models import (
    GAZE_CHANNELS,
    RISK_ORDER,
    ChannelSeries,
    CohortSummary,
    ExperimentResult,
    QualityReport,
    Recording,
    Segment,
    SelectionReport,
    StatReport,
)
from ..core.postproc import postprocess_recording, slice_segments
from ..core.selection import explain_selection, selection_to_dict, selection_to_frame, stability_run
from ..core.signals import recording_signals
from ..core.stats import run_stat_suite, stat_report_to_frame, stat_summary
from ..data.ingest import cohort_channels, load_cohort, load_manifest, validate_cohort
from ..data.synth import cohort_spec, generate_cohort
from .report import write_report
from .run_dir import RunDir

logger = logging.getLogger(__name__)


@contextmanager
def stage(name: str):
    logger.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e


# -------------------------
# Stage cache
# -------------------------

class StageCache:
    """joblib pickles under <root>/<stage>/<key>.joblib; root None disables caching."""

    def __init__(self, root: Optional[str | Path]):
        self.root = Path(root) if root else None
        self.hits: List[str] = []

    def fetch(self, stage_name: str, key: str, compute: Callable[[], Any]) -> Any:
        if self.root is None:
            return compute()
        path = self.root / stage_name / f"{key}.joblib"
        if path.exists():
            logger.info("cache hit %s %s", stage_name, key[:12])
            self.hits.append(stage_name)
            return joblib.load(path)
        value = compute()
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        joblib.dump(value, tmp)
        tmp.replace(path)
        return value


def source_key(cfg: PipelineConfig) -> str:
    """Content hash of the manifest and every recording it lists, or of the synth section."""
    if cfg.paths.manifest:
        manifest = Path(cfg.paths.manifest)
        h = hashlib.sha256(manifest.read_bytes())
        for entry in load_manifest(manifest)[1]:
            h.update(Path(entry["path"]).read_bytes())
        return h.hexdigest()
    if cfg.synth is not None:
        return section_hash(cohort_spec(cfg.synth))
    raise ConfigError("set paths.manifest or a [synth] section")


def face_model_key(cfg: PipelineConfig) -> Dict[str, Any]:
    """The face model actually used, so edits to `face_model_path` invalidate the cache."""
    model = cfg.signals.build_face_model()
    return {
        "points": model.points.tolist(),
        "interocular_width": model.interocular_width,
        "focal_length_px": model.focal_length_px,
    }


def features_key(cfg: PipelineConfig) -> str:
    sections = {name: getattr(cfg, name).model_dump(mode="json")
                for name in ("ingest", "signals", "postproc", "functionals")}
    sections["signals"]["face_model"] = face_model_key(cfg)
    return section_hash(sections, source_key(cfg))


# -------------------------
# Stages
# -------------------------

@dataclass
class FeatureBundle:
    table: pd.DataFrame
    cohort: CohortSummary
    channels: List[str]
    quality: QualityReport = field(default_factory=QualityReport)
    produced: Dict[str, int] = field(default_factory=dict)


def load_recordings(cfg: PipelineConfig) -> List[Recording]:
    if cfg.paths.manifest:
        return load_cohort(cfg.paths.manifest, None, cfg.ingest.n_jobs, cfg.ingest.format)
    if cfg.synth is not None:
        return generate_cohort(cohort_spec(cfg.synth), cfg.ingest.n_jobs)
    raise ConfigError("set paths.manifest or a [synth] section")


def extract_signals(recordings: Sequence[Recording], cfg: PipelineConfig,
                    quality: QualityReport) -> List[Dict[str, ChannelSeries]]:
    index_map = cfg.ingest.index_map.build()
    model = cfg.signals.build_face_model()
    return [
        recording_signals(rec, index_map, model, quality, cfg.signals.gimbal_limit_deg)
        for rec in recordings
    ]


def slice_cohort(recordings: Sequence[Recording], raw: Sequence[Dict[str, ChannelSeries]],
                 channels: Sequence[str], cfg: PipelineConfig,
                 quality: QualityReport) -> List[Segment]:
    pp = cfg.postproc
    include_gaze = all(c in channels for c in GAZE_CHANNELS)
    segments: List[Segment] = []
    for rec, rec_raw in zip(recordings, raw):
        processed = postprocess_recording(rec_raw, pp.window, pp.smooth_before_merge,
                                          include_gaze, rec.subject_id, quality)
        segments += slice_segments(processed, rec.subject_id, rec.risk_label,
                                   pp.window_s, pp.hop_s, pp.min_valid_fraction, quality)
    logger.info("%d segments from %d recordings", len(segments), len(recordings))
    return segments


def featurize_segments(segments: Sequence[Segment], cfg: PipelineConfig,
                       quality: QualityReport) -> pd.DataFrame:
    rows = []
    for seg in segments:
        sf = featurize(seg, cfg.functionals.min_valid_frames)
        quality.bump(seg.subject_id, "too_short_channels", len(sf.flags))
        rows.append(sf)
    df = features_to_frame(rows)
    logger.info("feature table %d x %d", len(df), df.shape[1] - 3)
    return df


def build_features(cfg: PipelineConfig) -> FeatureBundle:
    quality = QualityReport()
    with stage("ingest"):
        recordings = load_recordings(cfg)
        cohort = validate_cohort(recordings, cfg.postproc.window_s, cfg.postproc.hop_s)
        channels = cohort_channels(recordings)
    with stage("signals"):
        raw = extract_signals(recordings, cfg, quality)
    with stage("postproc"):
        segments = slice_cohort(recordings, raw, channels, cfg, quality)
    with stage("featurize"):
        table = featurize_segments(segments, cfg, quality)

    produced = {label.value: int((table["risk_label"] == label.value).sum()) for label in RISK_ORDER}
    return FeatureBundle(table=table, cohort=cohort, channels=list(channels),
                         quality=quality, produced=produced)


def stats_stage(table: pd.DataFrame, cfg: PipelineConfig) -> StatReport:
    with stage("stats"):
        s = cfg.stats
        return run_stat_suite(table, s.alpha, s.two_factor_alpha, s.rm_alpha)


def selector_params(cfg: PipelineConfig) -> Dict[str, Dict[str, Any]]:
    s = cfg.select
    binned = {"n_bins": s.n_bins}
    return {"mutual_info": binned, "chi2": binned, "mrmr": binned,
            "relieff": {"n_neighbors": s.relieff_neighbors}}


def select_stage(table: pd.DataFrame, cfg: PipelineConfig) -> SelectionReport:
    with stage("select"):
        X, y, _ = split_table(table)
        s = cfg.select
        return stability_run(
            X, y, s.methods, s.k_folds, s.runs, s.threshold_grid, s.bts_min, s.m_min,
            s.ji_min, s.top_fraction, s.corr_prune, cfg.seed, s.n_jobs, selector_params(cfg),
        )


def classify_stage(table: pd.DataFrame, selection: Optional[SelectionReport],
                   cfg: PipelineConfig) -> List[ExperimentResult]:
    """Every (model, sampling) on all features, then on the selected set, then the controls."""
    with stage("classify"):
        c = cfg.classify
        X, y, _ = split_table(table)
        specs = specs_from_config(c)
        results = [run_experiment(X, y, spec, c.n_trials, cfg.seed, c, "none", "all") for spec in specs]

        if selection is not None and selection.final_set:
            Xs = X[selection.final_set]
            results += [run_experiment(Xs, y, spec, c.n_trials, cfg.seed, c, "none", "selected")
                        for spec in specs]
        else:
            logger.warning("empty selected set; selected-feature runs skipped")

        if c.controls:
            for spec in specs:
                results += list(randomization_controls(X, y, spec, cfg.seed, c))
        return results


# -------------------------
# Full run
# -------------------------

def cohort_frame(bundle: FeatureBundle) -> pd.DataFrame:
    rows = bundle.cohort.to_rows()
    for row in rows:
        level = row["risk_level"]
        row["segments_produced"] = (sum(bundle.produced.values()) if level == "Total"
                                    else bundle.produced.get(level, 0))
    return pd.DataFrame(rows)


def quality_payload(quality: QualityReport) -> Dict[str, Any]:
    keys = sorted({k for per in quality.counters.values() for k in per})
    return {
        "totals": {k: quality.total(k) for k in keys},
        "per_subject": {sid: dict(sorted(per.items())) for sid, per in sorted(quality.counters.items())},
    }


def run_summary(bundle: FeatureBundle, report: StatReport, selection: SelectionReport,
                results: Sequence[ExperimentResult], cfg: PipelineConfig) -> Dict[str, Any]:
    rep = selection_representative(results, cfg.report.representative_tolerance)
    best = best_of(results)
    return {
        "cohort": cohort_frame(bundle).to_dict(orient="records"),
        "channels": bundle.channels,
        "n_segments": int(len(bundle.table)),
        "n_features": int(bundle.table.shape[1] - 3),
        "quality": quality_payload(bundle.quality)["totals"],
        "stats": {
            "corrected_alpha": report.corrected_alpha,
            "n_significant": len(report.significant),
            "n_subject_free": len(report.subject_free),
            "n_repeated_measures": len(report.repeated_measures),
        },
        "selection": {
            "stable_methods": selection.stable_methods,
            "final_set": selection.final_set,
            "cap": selection.cap,
        },
        "classification": {
            **rep,
            "best_of": best.to_dict(orient="records"),
        },
    }


def write_features(run: RunDir, bundle: FeatureBundle) -> None:
    run.write_json("signals", "quality.json", quality_payload(bundle.quality))
    run.write_json("signals", "channels.json", {"channels": bundle.channels})
    run.write_csv("signals", "cohort.csv", cohort_frame(bundle))
    run.write_csv("features", "features.csv", bundle.table)


def write_stats(run: RunDir, report: StatReport) -> None:
    run.write_csv("stats", "stat_report.csv", stat_report_to_frame(report))
    run.write_json("stats", "stat_summary.json", stat_summary(report))


def write_selection(run: RunDir, selection: SelectionReport, table: pd.DataFrame) -> None:
    run.write_csv("selection", "selection.csv", selection_to_frame(selection))
    run.write_json("selection", "selection.json", selection_to_dict(selection))
    run.write_csv("selection", "selected_features.csv", explain_selection(selection, table))


def write_experiments(run: RunDir, results: Sequence[ExperimentResult]) -> None:
    run.write_json("models", "experiments.json", {"experiments": [experiment_to_dict(r) for r in results]})
    run.write_csv("models", "experiments.csv",
                  pd.DataFrame([result_row(r) for r in results], columns=RESULT_COLUMNS))
    run.write_csv("models", "best_of.csv", best_of(results))


def run_pipeline(cfg: PipelineConfig, run_id: Optional[str] = None,
                 use_cache: bool = True) -> RunDir:
    """Run every stage and write the complete run directory."""
    cache = StageCache(cfg.paths.cache_dir if use_cache else None)
    run = RunDir.create(cfg, run_id)
    run.write_json("summary", "config.json", {"config": cfg.model_dump(mode="json")})

    with stage("ingest"):
        fkey = features_key(cfg)
    bundle: FeatureBundle = cache.fetch("features", fkey, lambda: build_features(cfg))
    write_features(run, bundle)

    skey = section_hash(cfg.stats, fkey)
    report = cache.fetch("stats", skey, lambda: stats_stage(bundle.table, cfg))
    write_stats(run, report)

    sel_key = section_hash(cfg.select, fkey, str(cfg.seed))
    selection = cache.fetch("selection", sel_key, lambda: select_stage(bundle.table, cfg))
    write_selection(run, selection, bundle.table)

    ekey = section_hash(cfg.classify, fkey, sel_key, str(cfg.seed))
    results = cache.fetch("experiments", ekey, lambda: classify_stage(bundle.table, selection, cfg))
    write_experiments(run, results)

    with stage("report"):
        summary = run_summary(bundle, report, selection, results, cfg)
        run.write_json("summary", "summary.json", summary)
        write_report(run)

    acc = summary["classification"]
    logger.info("done %s: best all %.3f, best selected %.3f, representative=%s",
                run.root, acc["best_all_accuracy"], acc["best_selected_accuracy"],
                acc["selection_representative"])
    return run
