"""
Command-line entry point.

    python -m riskgaze.app.cli synth --out data/synth
    python -m riskgaze.app.cli ingest --manifest data/synth/manifest.toml
    python -m riskgaze.app.cli run --config configs/demo.toml
    python -m riskgaze.app.cli report --run runs/<run_id>

Single-stage subcommands write into `--out` (or a fresh run directory)
using the same layout as a full run. Exit codes: 0 ok, 2 configuration or
usage error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import joblib
import pandas as pd

from ..core.config import (
    PipelineConfig,
    PostprocConfig,
    canonical_model,
    canonical_sampling,
    config_from_dict,
    load_config,
    log_level,
    validate_section,
)
from ..core.errors import ConfigError, RiskGazeError, StageError
from ..core.experiment import RESULT_COLUMNS, experiment_to_dict, fit_final, result_row, run_experiment
from ..core.functionals import split_table
from ..core.models import ModelSpec, QualityReport
from ..core.selection import selection_from_dict
from ..core.signals import signals_to_frame
from ..data.ingest import cohort_channels, load_cohort, validate_cohort
from ..data.synth import cohort_spec, write_cohort
from .pipeline import (
    build_features,
    extract_signals,
    quality_payload,
    run_pipeline,
    select_stage,
    slice_cohort,
    stage,
    stats_stage,
    write_features,
    write_selection,
    write_stats,
)
from .report import write_report
from .run_dir import RunDir, read_json, read_table

LOG_FORMAT = "[%(name)s] %(levelname)s: %(message)s"
EXIT_USAGE = 2
EXIT_STAGE = 3


def _parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    p = argparse.ArgumentParser(
        prog="riskgaze",
        description="Facial-landmark time series -> statistics, feature selection and risk-level classification.",
    )
    p.add_argument("--log-level", help="Overrides RISKGAZE_LOG_LEVEL (default INFO).")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name: str, help_: str, out: bool = True) -> argparse.ArgumentParser:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="PipelineConfig TOML/JSON; defaults apply when omitted.")
        if out:
            sp.add_argument("--out", help="Output directory (default: a new run directory).")
        return sp

    sp = command("synth", "Write a synthetic cohort plus manifest.", out=False)
    sp.add_argument("--out", required=True, help="Directory for recordings and manifest.toml.")
    sp.add_argument("--preset", choices=["strong", "weak", "null"])
    sp.add_argument("--seed", type=int)
    sp.add_argument("--format", choices=["csv", "jsonl"])

    for name, help_ in (
        ("ingest", "Parse and validate a cohort; writes the per-level cohort summary."),
        ("signals", "Per-frame signals CSV for every recording."),
        ("slice", "Post-process and slice into segments."),
        ("featurize", "Segment feature table (210 functionals)."),
    ):
        sp = command(name, help_)
        sp.add_argument("--manifest", help="Cohort manifest (overrides paths.manifest).")
        if name == "ingest":
            sp.add_argument("--format", choices=["csv", "jsonl"])
        if name in ("slice", "featurize"):
            sp.add_argument("--window", type=int, help="Moving-average window in frames (odd).")

    for name, help_ in (
        ("stats", "Statistical test suite over a feature table."),
        ("select", "Stability-validated feature selection."),
    ):
        sp = command(name, help_)
        sp.add_argument("--features", required=True, help="features.csv from featurize.")

    for name, help_ in (
        ("train", "Grid-search and fit one model on the whole table."),
        ("evaluate", "Repeated stratified trials for one (model, sampling)."),
    ):
        sp = command(name, help_)
        sp.add_argument("--features", required=True, help="features.csv from featurize.")
        sp.add_argument("--model", default="svm-rbf", help="mlp | svm-linear | svm-rbf")
        sp.add_argument("--sampling", default="none", help="none | over | under")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--select", help="selection.json; restrict to its final set.")
        if name == "evaluate":
            sp.add_argument("--trials", type=int)

    sp = command("run", "Full pipeline into a new run directory.", out=False)
    sp.add_argument("--no-cache", action="store_true", help="Ignore and do not write the stage cache.")

    sp = sub.add_parser("report", help="Re-render report.md and accuracy.png for a run.")
    sp.add_argument("--run", required=True, help="Run directory.")

    return p.parse_args(argv)


# -------------------------
# Config resolution
# -------------------------

def _load(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else config_from_dict({})
    if getattr(args, "manifest", None):
        cfg.paths.manifest = str(Path(args.manifest).resolve())
    if getattr(args, "window", None) is not None:
        cfg.postproc = validate_section(PostprocConfig, {**cfg.postproc.model_dump(), "window": args.window})
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _out(args: argparse.Namespace, cfg: PipelineConfig) -> RunDir:
    return RunDir.at(args.out, cfg) if getattr(args, "out", None) else RunDir.create(cfg)


def _spec(args: argparse.Namespace) -> ModelSpec:
    return ModelSpec(kind=canonical_model(args.model), sampling=canonical_sampling(args.sampling))


def _feature_matrix(args: argparse.Namespace):
    table = read_table(args.features)
    X, y, _ = split_table(table)
    if args.select:
        selection = selection_from_dict(read_json(args.select))
        if not selection.final_set:
            raise ConfigError(f"{args.select}: selected set is empty")
        return X[selection.final_set], y, "selected"
    return X, y, "all"


# -------------------------
# Subcommands
# -------------------------

def cmd_synth(args, cfg: PipelineConfig) -> None:
    overrides = {k: v for k, v in (("preset", args.preset), ("seed", args.seed), ("format", args.format))
                 if v is not None}
    manifest = write_cohort(cohort_spec(cfg.synth, **overrides), args.out, cfg.ingest.n_jobs)
    print(manifest)


def _recordings(args, cfg: PipelineConfig):
    if not cfg.paths.manifest:
        raise ConfigError("no manifest: pass --manifest or set paths.manifest")
    return load_cohort(cfg.paths.manifest, getattr(args, "format", None), cfg.ingest.n_jobs, cfg.ingest.format)


def cmd_ingest(args, cfg: PipelineConfig) -> None:
    run = _out(args, cfg)
    recordings = _recordings(args, cfg)
    cohort = validate_cohort(recordings, cfg.postproc.window_s, cfg.postproc.hop_s)
    table = pd.DataFrame(cohort.to_rows())
    run.write_csv("signals", "cohort.csv", table)
    run.write_json("signals", "channels.json", {"channels": cohort_channels(recordings)})
    print(table.to_string(index=False))


def cmd_signals(args, cfg: PipelineConfig) -> None:
    run = _out(args, cfg)
    recordings = _recordings(args, cfg)
    quality = QualityReport()
    for rec, raw in zip(recordings, extract_signals(recordings, cfg, quality)):
        run.write_csv("signals", f"{rec.subject_id}.csv",
                      signals_to_frame(rec, raw, cfg.signals.gimbal_limit_deg))
    run.write_json("signals", "quality.json", quality_payload(quality))
    print(run.root / "signals")


def cmd_slice(args, cfg: PipelineConfig) -> None:
    run = _out(args, cfg)
    recordings = _recordings(args, cfg)
    quality = QualityReport()
    raw = extract_signals(recordings, cfg, quality)
    segments = slice_cohort(recordings, raw, cohort_channels(recordings), cfg, quality)
    table = pd.DataFrame(
        [{"subject_id": s.subject_id, "risk_label": s.risk_label.value, "segment_index": s.segment_index,
          "start_s": s.start_s, "end_s": s.end_s, "valid_fraction": s.valid_fraction} for s in segments],
        columns=["subject_id", "risk_label", "segment_index", "start_s", "end_s", "valid_fraction"],
    )
    run.write_csv("features", "segments.csv", table)
    run.write_json("signals", "quality.json", quality_payload(quality))
    print(f"{len(segments)} segments -> {run.root / 'features' / 'segments.csv'}")


def cmd_featurize(args, cfg: PipelineConfig) -> None:
    if not cfg.paths.manifest and cfg.synth is None:
        raise ConfigError("no manifest: pass --manifest or set paths.manifest")
    run = _out(args, cfg)
    bundle = build_features(cfg)
    write_features(run, bundle)
    print(run.path("features", "features.csv"))


def cmd_stats(args, cfg: PipelineConfig) -> None:
    run = _out(args, cfg)
    report = stats_stage(read_table(args.features), cfg)
    write_stats(run, report)
    print(f"{len(report.significant)} significant, {len(report.subject_free)} subject-free "
          f"-> {run.root / 'stats'}")


def cmd_select(args, cfg: PipelineConfig) -> None:
    run = _out(args, cfg)
    table = read_table(args.features)
    selection = select_stage(table, cfg)
    write_selection(run, selection, table)
    print(", ".join(selection.final_set) or "(empty selection)")


def cmd_train(args, cfg: PipelineConfig) -> None:
    run = _out(args, cfg)
    X, y, feature_set = _feature_matrix(args)
    spec = _spec(args)
    model, scaler, hyper = fit_final(X, y, spec, cfg.seed, cfg.classify)
    joblib.dump({"model": model, "scaler": scaler, "features": list(X.columns), "meta": run.meta},
                run.path("models", "model.joblib"))
    run.write_json("models", "train.json", {
        "model": spec.kind, "sampling": spec.sampling, "feature_set": feature_set,
        "features": list(X.columns), "hyper": hyper,
    })
    print(f"{spec.label} {hyper} -> {run.path('models', 'model.joblib')}")


def cmd_evaluate(args, cfg: PipelineConfig) -> None:
    run = _out(args, cfg)
    X, y, feature_set = _feature_matrix(args)
    trials = args.trials or cfg.classify.n_trials
    result = run_experiment(X, y, _spec(args), trials, cfg.seed, cfg.classify, "none", feature_set)
    run.write_json("models", "experiments.json", {"experiments": [experiment_to_dict(result)]})
    table = pd.DataFrame([result_row(result)], columns=RESULT_COLUMNS)
    run.write_csv("models", "best_of.csv", table)
    print(table.to_string(index=False))


def cmd_run(args, cfg: PipelineConfig) -> None:
    run = run_pipeline(cfg, use_cache=not args.no_cache)
    print(run.root)


def cmd_report(args, cfg: PipelineConfig) -> None:
    run = RunDir.open(args.run)
    write_report(run)
    print(run.path("summary", "report.md"))


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "signals": cmd_signals,
    "slice": cmd_slice,
    "featurize": cmd_featurize,
    "stats": cmd_stats,
    "select": cmd_select,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parse_args(argv)
    logging.basicConfig(level=(args.log_level or log_level()).upper(), format=LOG_FORMAT)

    try:
        cfg = _load(args)
        with stage(args.command):
            COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        print(f"[config] ERROR: {e}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as e:
        print(f"[{e.stage}] ERROR: {e.cause}", file=sys.stderr)
        return EXIT_USAGE if isinstance(e.cause, ConfigError) else EXIT_STAGE
    except RiskGazeError as e:
        print(f"[{args.command}] ERROR: {e}", file=sys.stderr)
        return EXIT_STAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
