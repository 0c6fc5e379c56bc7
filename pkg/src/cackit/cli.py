"""Command-line entry points.

Every subcommand operates on one store directory (``--store``). Exit
codes: 0 clean, 2 completed with per-study exclusions, 1 failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .agatston import ScoringConfig
from .cohort import load_patient_records, load_scan_records
from .errors import CacError
from .ingest import SelectionPolicy
from .masks import ExternalRunnerConfig
from .pipeline import (
    PipelineConfig,
    evaluate,
    run_pipeline,
    screening_report,
    stage_extract,
    stage_ingest,
    stage_pair,
    stage_score,
    stage_segment,
    stage_split,
    stage_survival_rows,
    survival_outputs,
    therapy_gap_report,
    write_json,
)
from .reports import RulePack
from .store import ScoreStore


class Context:
    def __init__(self, store_dir: str, seed: int | None):
        self.store_dir = store_dir
        self.seed = seed
        self._store: ScoreStore | None = None

    @property
    def store(self) -> ScoreStore:
        if self._store is None:
            self._store = ScoreStore(self.store_dir, root_seed=self.seed)
        return self._store


def _fail(exc: Exception) -> "click.exceptions.Exit":
    click.echo(f"error: {exc}", err=True)
    return click.exceptions.Exit(1)


@click.group()
@click.option("--store", "store_dir", default="cac-store",
              show_default=True, help="store directory")
@click.option("--seed", type=int, default=None,
              help="root seed recorded in the store manifest")
@click.pass_context
def main(ctx, store_dir: str, seed: int | None):
    """Opportunistic coronary calcium scoring toolkit."""
    ctx.obj = Context(store_dir, seed)


@main.command()
@click.option("--input", "input_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--policy", "policy_file", type=click.Path(exists=True))
@click.pass_obj
def ingest(obj: Context, input_dir: str, policy_file: str | None):
    """Select one series per study and copy volumes into the store."""
    policy = SelectionPolicy.from_file(policy_file) if policy_file else None
    try:
        result = stage_ingest(obj.store, input_dir, policy)
    except CacError as exc:
        raise _fail(exc)
    click.echo(json.dumps(result))
    sys.exit(2 if result["excluded"] else 0)


@main.command()
@click.option("--masks", "masks_dir", type=click.Path(exists=True),
              help="directory of precomputed <study_uid>.cacmask files")
@click.option("--runner", "runner_cmd", type=str,
              help="external segmenter argv (whitespace separated)")
@click.option("--baseline", is_flag=True,
              help="threshold baseline segmenter over the ROI")
@click.option("--roi", type=str, default=None,
              help="z0,y0,x0,z1,y1,x1 voxel box for --baseline")
@click.pass_obj
def segment(obj: Context, masks_dir: str | None, runner_cmd: str | None,
            baseline: bool, roi: str | None):
    """Attach a calcium mask to every ingested study."""
    runner = (ExternalRunnerConfig(command=runner_cmd.split())
              if runner_cmd else None)
    roi_box = tuple(int(v) for v in roi.split(",")) if roi else None
    try:
        result = stage_segment(obj.store, masks_dir=masks_dir, runner=runner,
                               baseline=baseline, roi=roi_box)
    except CacError as exc:
        raise _fail(exc)
    click.echo(json.dumps(result))
    sys.exit(2 if result["excluded"] else 0)


@main.command()
@click.option("--config", "config_file", type=click.Path(exists=True),
              help="ScoringConfig JSON")
@click.pass_obj
def score(obj: Context, config_file: str | None):
    """Agatston-score every masked study in the store."""
    config = (ScoringConfig.from_file(config_file)
              if config_file else ScoringConfig())
    try:
        result = stage_score(obj.store, config)
    except CacError as exc:
        raise _fail(exc)
    click.echo(json.dumps(result))
    sys.exit(2 if result["excluded"] else 0)


@main.command("extract-reports")
@click.option("--in", "reports_file", required=True,
              type=click.Path(exists=True))
@click.option("--rules", "rules_file", type=click.Path(exists=True))
@click.pass_obj
def extract_reports(obj: Context, reports_file: str, rules_file: str | None):
    """Extract reference Agatston scores from report records."""
    rules = RulePack.load(rules_file) if rules_file else None
    try:
        result = stage_extract(obj.store, reports_file, rules)
    except CacError as exc:
        raise _fail(exc)
    click.echo(json.dumps(result))


@main.command()
@click.option("--scans", "scans_file", required=True,
              type=click.Path(exists=True))
@click.option("--window-days", type=int, default=365, show_default=True)
@click.pass_obj
def pair(obj: Context, scans_file: str, window_days: int):
    """Build nearest non-gated/gated pairs within the window."""
    try:
        result = stage_pair(obj.store, scans_file, window_days)
    except CacError as exc:
        raise _fail(exc)
    click.echo(json.dumps(result))


@main.command()
@click.pass_obj
def split(obj: Context):
    """Stratified 50:50 center split of the paired cohort."""
    try:
        result = stage_split(obj.store)
    except CacError as exc:
        raise _fail(exc)
    click.echo(json.dumps(result))


@main.command("survival-rows")
@click.option("--patients", "patients_file", required=True,
              type=click.Path(exists=True))
@click.option("--scans", "scans_file", required=True,
              type=click.Path(exists=True))
@click.option("--diagnoses", "diagnoses_file", type=click.Path(exists=True))
@click.option("--prescriptions", "prescriptions_file",
              type=click.Path(exists=True))
@click.option("--outcome", type=click.Choice(["death", "composite"]),
              default="death", show_default=True)
@click.option("--strata",
              type=click.Choice(["none", "lipid-ever", "lipid-before-event"]),
              default="none", show_default=True)
@click.pass_obj
def survival_rows(obj: Context, patients_file: str, scans_file: str,
                  diagnoses_file: str | None, prescriptions_file: str | None,
                  outcome: str, strata: str):
    """Derive survival rows for scored studies."""
    outcome_kind = ("all_cause_death" if outcome == "death"
                    else "composite_mi_cva_death")
    try:
        result = stage_survival_rows(
            obj.store, patients_file, scans_file, diagnoses_file,
            prescriptions_file, outcome_kind=outcome_kind,
            strata=strata.replace("-", "_"))
    except CacError as exc:
        raise _fail(exc)
    click.echo(json.dumps(result))


@main.command()
@click.option("--grid", type=click.Choice(["yearly", "monthly"]),
              default="yearly", show_default=True)
@click.option("--out", "out_dir", type=click.Path())
@click.pass_obj
def survival(obj: Context, grid: str, out_dir: str | None):
    """Emit KM curves, at-risk tables, and Cox fits."""
    try:
        result = survival_outputs(obj.store, grid=grid, out_dir=out_dir)
    except CacError as exc:
        raise _fail(exc)
    click.echo(json.dumps(result))


@main.command("evaluate")
@click.option("--thresholds", default="1,100,400", show_default=True)
@click.option("--subgroups", default="manufacturer,sex,kvp",
              show_default=True)
@click.option("--out", "out_dir", type=click.Path())
@click.pass_obj
def evaluate_cmd(obj: Context, thresholds: str, subgroups: str,
                 out_dir: str | None):
    """Agreement metrics between AI and reference scores."""
    try:
        result = evaluate(
            obj.store, out_dir=out_dir,
            thresholds=tuple(int(t) for t in thresholds.split(",")),
            subgroups=tuple(s for s in subgroups.split(",") if s))
    except CacError as exc:
        raise _fail(exc)
    click.echo(json.dumps(result))


def _score_items(store: ScoreStore, scans_file: str | None):
    scans = {}
    if scans_file:
        scans = {s.study_uid: s for s in load_scan_records(scans_file)}
    items = []
    for rec in store.read("scores"):
        scan = scans.get(rec["study_uid"])
        items.append((rec["bin"], scan.patient_id if scan else None))
    return items


@main.command("screening-report")
@click.option("--scans", "scans_file", type=click.Path(exists=True))
@click.option("--patients", "patients_file", type=click.Path(exists=True))
@click.option("--prescriptions", "prescriptions_file",
              type=click.Path(exists=True))
@click.pass_obj
def screening_report_cmd(obj: Context, scans_file: str | None,
                         patients_file: str | None,
                         prescriptions_file: str | None):
    """Score-bin distribution of everything scored in the store."""
    patients = None
    if patients_file:
        patients = load_patient_records(
            patients_file, prescriptions_path=prescriptions_file)
    report = screening_report(_score_items(obj.store, scans_file), patients)
    write_json(obj.store.reports_dir() / "screening.json", report)
    click.echo(json.dumps(report["full"]))


@main.command("therapy-gap")
@click.option("--scans", "scans_file", required=True,
              type=click.Path(exists=True))
@click.option("--patients", "patients_file", required=True,
              type=click.Path(exists=True))
@click.option("--prescriptions", "prescriptions_file",
              type=click.Path(exists=True))
@click.pass_obj
def therapy_gap(obj: Context, scans_file: str, patients_file: str,
                prescriptions_file: str | None):
    """High-CAC living patients without lipid-lowering therapy."""
    patients = load_patient_records(
        patients_file, prescriptions_path=prescriptions_file)
    report = therapy_gap_report(_score_items(obj.store, scans_file),
                                patients)
    write_json(obj.store.reports_dir() / "therapy_gap.json", report)
    click.echo(json.dumps({k: report[k] for k in
                           ("n_living_gt400", "n_untreated",
                            "percent_untreated")}))


@main.group()
def review():
    """Reviewer workflow commands."""


@review.command()
@click.option("--port", type=int, default=8321, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.pass_obj
def serve(obj: Context, port: int, host: str):
    """Serve the review HTTP API over the store."""
    import uvicorn

    from .server import create_app

    uvicorn.run(create_app(obj.store_dir), host=host, port=port)


@main.command()
@click.option("--config", "config_file", required=True,
              type=click.Path(exists=True))
@click.pass_obj
def run(obj: Context, config_file: str):
    """Run the full pipeline described by a config file."""
    config = PipelineConfig.from_file(config_file)
    try:
        summary = run_pipeline(obj.store, config)
    except CacError as exc:
        raise _fail(exc)
    click.echo(json.dumps(summary, sort_keys=True))
    sys.exit(summary["exit_code"])


if __name__ == "__main__":
    main()
