"""End-to-end orchestration: ingest, segment, score, pair, evaluate.

Per-study failures become exclusion records so one corrupt study never
kills a run; configuration-level failures raise PipelineStageError with
the stage name. All emitted files are deterministic for a fixed store
seed: canonical JSON, sorted iteration, no timestamps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .agatston import ScoringConfig, bin_score, round_half_up, score_scan
from .cohort import (
    PairedStudy,
    SurvivalRow,
    build_pairs,
    load_patient_records,
    load_scan_records,
    make_survival_rows,
    split_by_center,
)
from .errors import CacError, PipelineStageError, RunnerFailed
from .ingest import (
    SelectionPolicy,
    SeriesMeta,
    load_volume,
    parse_study_manifest,
    read_series_fixture,
    select_series,
    write_series_fixture,
)
from .masks import (
    ExternalRunnerConfig,
    baseline_segment,
    full_roi,
    load_mask,
    run_external_model,
    serialize_mask,
)
from .reports import RulePack, extract_agatston
from .stats import (
    bland_altman,
    bootstrap_ci,
    confusion_matrix,
    correlations,
    cox_two_group,
    icc_agreement,
    km_estimate,
    subgroup_evaluate,
    threshold_metrics,
    weighted_kappa,
)
from .store import ScoreStore, read_jsonl

GRID_STEPS = {"yearly": 365, "monthly": 30}


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", "utf-8")


def write_tsv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = ["\t".join(header)]
    for row in rows:
        lines.append("\t".join("" if v is None else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", "utf-8")


def _exclude(store: ScoreStore, stage: str, study_uid: str,
             reason: str) -> None:
    store.append("exclusions", {"stage": stage, "study_uid": study_uid,
                                "reason": reason})


# --- stages -----------------------------------------------------------------

def stage_ingest(store: ScoreStore, input_dir: str | Path,
                 policy: SelectionPolicy | None = None) -> dict:
    """Select one series per study directory and copy its volume in."""
    root = Path(input_dir)
    if not root.is_dir():
        raise PipelineStageError("ingest", None,
                                 FileNotFoundError(str(root)))
    policy = policy or SelectionPolicy()
    n_ok = n_excluded = 0
    for study_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        try:
            candidates = parse_study_manifest(study_dir)
            chosen = select_series(candidates, policy)
            series_dir = _series_dir_for(study_dir, chosen.series_uid)
            volume = load_volume(chosen, series_dir)
            write_series_fixture(store.volume_dir(chosen.study_uid), volume)
            store.append("ingest", {
                "study_uid": chosen.study_uid,
                "series_uid": chosen.series_uid,
                "meta": chosen.to_dict(),
                "n_slices": volume.n_slices,
                "n_rows": volume.n_rows,
                "n_cols": volume.n_cols,
            })
            n_ok += 1
        except CacError as exc:
            _exclude(store, "ingest", study_dir.name, str(exc))
            n_excluded += 1
    return {"ingested": n_ok, "excluded": n_excluded}


def _series_dir_for(study_dir: Path, series_uid: str) -> Path:
    direct = study_dir / series_uid
    if (direct / "manifest").is_file():
        return direct
    for candidate in sorted(p for p in study_dir.iterdir() if p.is_dir()):
        manifest = candidate / "manifest"
        if manifest.is_file():
            raw = json.loads(manifest.read_text("utf-8"))
            if raw.get("series_uid") == series_uid:
                return candidate
    raise PipelineStageError(
        "ingest", series_uid,
        FileNotFoundError(f"no series dir for {series_uid} in {study_dir}"))


def stage_segment(store: ScoreStore, masks_dir: str | Path | None = None,
                  runner: ExternalRunnerConfig | None = None,
                  baseline: bool = False,
                  roi: tuple[int, ...] | None = None) -> dict:
    """Produce one canonical mask per ingested study."""
    if masks_dir is None and runner is None and not baseline:
        raise PipelineStageError(
            "segment", None,
            RunnerFailed("no mask source: pass masks_dir, a runner, "
                         "or enable the baseline segmenter"))
    n_ok = n_excluded = 0
    for rec in store.read("ingest"):
        study_uid = rec["study_uid"]
        try:
            volume = read_series_fixture(store.volume_dir(study_uid))
            if masks_dir is not None:
                src = Path(masks_dir) / f"{study_uid}.cacmask"
                if not src.is_file():
                    raise RunnerFailed(f"no mask file {src}")
                mask = load_mask(src, volume)
            elif runner is not None:
                mask = run_external_model(volume, runner)
            else:
                mask = baseline_segment(volume, roi or full_roi(volume))
            store.mask_path(study_uid).write_text(serialize_mask(mask),
                                                  "utf-8")
            n_ok += 1
        except CacError as exc:
            _exclude(store, "segment", study_uid, str(exc))
            n_excluded += 1
    return {"segmented": n_ok, "excluded": n_excluded}


def stage_score(store: ScoreStore,
                config: ScoringConfig | None = None) -> dict:
    config = config or ScoringConfig()
    store.set_fingerprint("score", config.fingerprint())
    n_ok = n_skipped = n_excluded = 0
    for rec in store.read("ingest"):
        study_uid = rec["study_uid"]
        if not store.mask_path(study_uid).is_file():
            n_skipped += 1   # excluded at segment; already accounted there
            continue
        try:
            volume = read_series_fixture(store.volume_dir(study_uid))
            mask = load_mask(store.mask_path(study_uid), volume)
            store.append("scores",
                         score_scan(volume, mask, config).to_record())
            n_ok += 1
        except CacError as exc:
            _exclude(store, "score", study_uid, str(exc))
            n_excluded += 1
    return {"scored": n_ok, "skipped": n_skipped, "excluded": n_excluded}


def stage_extract(store: ScoreStore, reports_file: str | Path,
                  rules: RulePack | None = None) -> dict:
    rules = rules or RulePack.load()
    n = 0
    for rec in read_jsonl(reports_file):
        result = extract_agatston(rec["report_text"], rules)
        store.append("extractions", {
            "report_id": rec.get("report_id", ""),
            "patient_id": rec.get("patient_id", ""),
            "study_uid": rec.get("study_uid", ""),
            "report_date": rec.get("report_date", ""),
            **result.to_record(),
        })
        n += 1
    return {"extracted": n}


def stage_pair(store: ScoreStore, scans_file: str | Path,
               window_days: int = 365) -> dict:
    """Join scored non-gated scans with report-scored gated scans."""
    scans = load_scan_records(scans_file)
    scores = {r["study_uid"]: r for r in store.read("scores")}
    extracted = {r["study_uid"]: r["score"]
                 for r in store.read("extractions")
                 if r["status"] == "extracted"}

    nongated = [s for s in scans if s.study_uid in scores]
    gated = []
    for s in scans:
        if s.study_uid in extracted:
            s.reference_score = float(extracted[s.study_uid])
            gated.append(s)

    pairs = build_pairs(nongated, gated, window_days=window_days)
    for pair in pairs:
        score = scores[pair.nongated_study_uid]
        pair.ai_rounded = score["rounded"]
        pair.ai_total = score["total"]
        store.append("pairs", pair.to_record())
    return {"paired": len(pairs)}


def stage_split(store: ScoreStore) -> dict:
    pairs = [PairedStudy.from_record(r) for r in store.read("pairs")]
    tune, test = split_by_center(pairs, seed=store.seed_for("split"))
    for side, members in (("tune", tune), ("test", test)):
        for pair in sorted(members, key=lambda p: p.patient_id):
            store.append("splits", {"patient_id": pair.patient_id,
                                    "side": side})
    return {"tune": len(tune), "test": len(test)}


def stage_survival_rows(store: ScoreStore, patients_file: str | Path,
                        scans_file: str | Path,
                        diagnoses_file: str | Path | None = None,
                        prescriptions_file: str | Path | None = None,
                        outcome_kind: str = "all_cause_death",
                        strata: str = "none") -> dict:
    patients = load_patient_records(patients_file, diagnoses_file,
                                    prescriptions_file)
    scans = {s.study_uid: s for s in load_scan_records(scans_file)}
    index_dates = {}
    base_labels = {}
    for rec in store.read("scores"):
        scan = scans.get(rec["study_uid"])
        if scan is None:
            continue
        index_dates[scan.patient_id] = scan.date
        base_labels[scan.patient_id] = rec["bin"]
    rows = make_survival_rows(patients, index_dates, base_labels,
                              outcome_kind, strata)
    for row in rows:
        store.append("survival_rows", row.to_record())
    return {"rows": len(rows), "outcome": outcome_kind}


# --- report emitters -----------------------------------------------------------

def evaluate(store: ScoreStore, out_dir: str | Path | None = None,
             thresholds: tuple[int, ...] = (1, 100, 400),
             subgroups: tuple[str, ...] = ("manufacturer", "sex", "kvp"),
             bootstrap_iterations: int = 1000) -> dict:
    """Agreement bundle over paired studies: Table-1-style metrics,
    confusion matrix with kappa and bootstrap CI, correlations, and
    Bland-Altman points."""
    out = Path(out_dir) if out_dir is not None else store.reports_dir()
    out.mkdir(parents=True, exist_ok=True)
    pairs = [r for r in store.read("pairs") if r["ai_rounded"] is not None]
    if not pairs:
        raise PipelineStageError("evaluate", None,
                                 ValueError("no paired studies with scores"))

    ref_rounded = [round_half_up(r["reference_score"]) for r in pairs]
    ai_rounded = [r["ai_rounded"] for r in pairs]
    raw = [(r["reference_score"], r["ai_total"]) for r in pairs]

    metric_rows = []
    for t in thresholds:
        m = threshold_metrics(list(zip(ref_rounded, ai_rounded)), t)
        pct = m.percent_row()
        metric_rows.append([t, pct["accuracy"], pct["ppv"], pct["npv"],
                            pct["sensitivity"], pct["specificity"],
                            pct["f1"], m.tp, m.fp, m.fn, m.tn])
    write_tsv(out / "threshold_metrics.tsv",
              ["threshold", "accuracy", "ppv", "npv", "sensitivity",
               "specificity", "f1", "tp", "fp", "fn", "tn"],
              metric_rows)

    bin_pairs = [(bin_score(r), bin_score(a))
                 for r, a in zip(ref_rounded, ai_rounded)]
    cm = confusion_matrix(bin_pairs)
    kappa = weighted_kappa(cm)
    lo, hi = bootstrap_ci(
        bin_pairs, lambda ps: weighted_kappa(confusion_matrix(ps)),
        iterations=bootstrap_iterations,
        seed=store.seed_for("evaluate-bootstrap"))
    write_json(out / "agreement.json", {
        "n": len(bin_pairs),
        "confusion_matrix": cm.counts.tolist(),
        "percent_agreement": round(100.0 * cm.percent_agreement, 1),
        "weighted_kappa": kappa,
        "kappa_ci95": [lo, hi],
    })

    pearson, spearman = correlations(raw)
    write_json(out / "correlation.json", {
        "pearson": pearson,
        "spearman": spearman,
        "icc_agreement": icc_agreement(raw),
    })

    ba = bland_altman(raw)
    write_json(out / "bland_altman.json", {
        "mean_diff": ba.mean_diff, "sd_diff": ba.sd_diff,
        "lower": ba.lower, "upper": ba.upper,
        "points": ba.points,
    })

    if subgroups:
        meta_by_study = {r["study_uid"]: SeriesMeta(**r["meta"])
                         for r in store.read("ingest")}
        items = []
        for rec, ref, ai in zip(pairs, ref_rounded, ai_rounded):
            meta = meta_by_study.get(rec["nongated_study_uid"])
            if meta is not None:
                items.append((ref, ai, meta))
        report = subgroup_evaluate(items, keys=subgroups,
                                   thresholds=thresholds)
        serializable = {
            key: {value: {str(t): m.percent_row() | {
                "tp": m.tp, "fp": m.fp, "fn": m.fn, "tn": m.tn}
                for t, m in per_threshold.items()}
                for value, per_threshold in table.items()}
            for key, table in report.tables.items()
        }
        write_json(out / "subgroups.json",
                   {"tables": serializable, "notes": report.notes})

    return {"pairs": len(pairs), "kappa": kappa}


def survival_outputs(store: ScoreStore, grid: str = "yearly",
                     out_dir: str | Path | None = None) -> dict:
    """KM curves, at-risk tables, and Cox fits per outcome kind."""
    step = GRID_STEPS.get(grid)
    if step is None:
        raise PipelineStageError("survival", None,
                                 ValueError(f"unknown grid {grid!r}"))
    out = Path(out_dir) if out_dir is not None else store.reports_dir()
    out.mkdir(parents=True, exist_ok=True)
    rows = [SurvivalRow.from_record(r) for r in store.read("survival_rows")]
    if not rows:
        raise PipelineStageError("survival", None,
                                 ValueError("no survival rows in store"))

    emitted = {}
    for outcome in sorted({r.outcome_kind for r in rows}):
        subset = [r for r in rows if r.outcome_kind == outcome]
        by_label: dict[str, list[SurvivalRow]] = {}
        for r in subset:
            by_label.setdefault(r.group_label, []).append(r)

        max_duration = max(r.duration_days for r in subset)
        grid_times = list(range(0, max_duration + step, step))

        groups = {}
        for label in sorted(by_label):
            curve = km_estimate(by_label[label])
            groups[label] = {
                "n": len(by_label[label]),
                "times": curve.times.tolist(),
                "survival": curve.survival.tolist(),
                "at_risk_table": curve.at_risk_table(grid_times),
            }

        reference = "0" if "0" in by_label else sorted(by_label)[0]
        cox = {}
        for label in sorted(by_label):
            if label == reference:
                continue
            two = by_label[reference] + by_label[label]
            try:
                fit = cox_two_group(two, reference_label=reference)
                cox[label] = {"hr": fit.hr, "log_hr": fit.log_hr,
                              "se": fit.se, "p_value": fit.p_value,
                              "converged": fit.converged}
            except CacError as exc:
                cox[label] = {"error": type(exc).__name__,
                              "detail": str(exc)}

        payload = {"outcome": outcome, "reference": reference,
                   "grid_days": grid_times, "groups": groups, "cox": cox}
        path = out / f"survival_{outcome}.json"
        write_json(path, payload)
        emitted[outcome] = str(path)
    return emitted


def screening_report(items: list[tuple[str, str | None]],
                     patients: dict | None = None) -> dict:
    """Score-bin distribution, optionally crossed with therapy status.

    ``items`` are (bin value, patient id or None) per scored study. The
    therapy panels need ``patients`` and skip studies without a patient.
    """
    def tally(selected: list[str]) -> dict:
        n = len(selected)
        order = ("0", "1-100", "101-400", ">400")
        counts = {b: 0 for b in order}
        for b in selected:
            counts[b] += 1
        return {
            "n": n,
            "counts": counts,
            "percent": {b: (None if n == 0 else round(100.0 * c / n, 1))
                        for b, c in counts.items()},
        }

    report = {"full": tally([b for b, _ in items])}
    if patients is not None:
        def panel(predicate) -> dict:
            keep = [b for b, pid in items
                    if pid is not None and pid in patients
                    and predicate(patients[pid])]
            return tally(keep)

        report["ever_prescribed"] = panel(
            lambda p: bool(p.lipid_issue_dates))
        report["never_prescribed"] = panel(
            lambda p: not p.lipid_issue_dates)
        report["living_on_therapy"] = panel(
            lambda p: p.death_date is None and bool(p.lipid_issue_dates))
        report["living_off_therapy"] = panel(
            lambda p: p.death_date is None and not p.lipid_issue_dates)
    return report


def therapy_gap_report(items: list[tuple[str, str | None]],
                       patients: dict) -> dict:
    """Living patients with a >400 score and no lipid-therapy issue."""
    living_gt400 = []
    untreated = []
    for bin_value, pid in items:
        if bin_value != ">400" or pid is None or pid not in patients:
            continue
        patient = patients[pid]
        if patient.death_date is not None:
            continue
        living_gt400.append(pid)
        if not patient.lipid_issue_dates:
            untreated.append(pid)
    n = len(living_gt400)
    return {
        "n_living_gt400": n,
        "n_untreated": len(untreated),
        "percent_untreated": None if n == 0 else
        round(100.0 * len(untreated) / n, 1),
        "untreated_patient_ids": sorted(untreated),
    }


# --- full pipeline ---------------------------------------------------------------

@dataclass
class PipelineConfig:
    input_dir: str
    scans_file: str | None = None
    reports_file: str | None = None
    patients_file: str | None = None
    diagnoses_file: str | None = None
    prescriptions_file: str | None = None
    policy_file: str | None = None
    rules_file: str | None = None
    masks_dir: str | None = None
    runner_command: list[str] | None = None
    baseline: bool = False
    scoring: dict = field(default_factory=dict)
    window_days: int = 365
    thresholds: tuple[int, ...] = (1, 100, 400)
    grid: str = "yearly"
    outcomes: tuple[str, ...] = ("all_cause_death",)
    strata: str = "none"

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        raw = json.loads(Path(path).read_text("utf-8"))
        for key in ("thresholds", "outcomes"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return cls(**raw)


def run_pipeline(store: ScoreStore, config: PipelineConfig) -> dict:
    """Run every configured stage; returns counts and an exit code.

    Exit code 0 means everything scored; 2 flags a run that completed
    with per-study exclusions (the caller decides whether that matters).
    """
    policy = (SelectionPolicy.from_file(config.policy_file)
              if config.policy_file else None)
    scoring = ScoringConfig(**config.scoring)
    runner = (ExternalRunnerConfig(command=config.runner_command)
              if config.runner_command else None)

    n_input = len([p for p in Path(config.input_dir).iterdir()
                   if p.is_dir()])
    summary = {"input_studies": n_input}
    summary["ingest"] = stage_ingest(store, config.input_dir, policy)
    summary["segment"] = stage_segment(store, masks_dir=config.masks_dir,
                                       runner=runner,
                                       baseline=config.baseline)
    summary["score"] = stage_score(store, scoring)

    if config.reports_file:
        rules = (RulePack.load(config.rules_file)
                 if config.rules_file else None)
        summary["extract"] = stage_extract(store, config.reports_file, rules)
    if config.scans_file and config.reports_file:
        summary["pair"] = stage_pair(store, config.scans_file,
                                     config.window_days)
        summary["split"] = stage_split(store)
        summary["evaluate"] = evaluate(store, thresholds=config.thresholds)
    if config.patients_file and config.scans_file:
        for outcome in config.outcomes:
            stage_survival_rows(
                store, config.patients_file, config.scans_file,
                config.diagnoses_file, config.prescriptions_file,
                outcome_kind=outcome, strata=config.strata)
        summary["survival"] = survival_outputs(store, grid=config.grid)

        patients = load_patient_records(config.patients_file,
                                        config.diagnoses_file,
                                        config.prescriptions_file)
        scans = {s.study_uid: s
                 for s in load_scan_records(config.scans_file)}
        items = []
        for rec in store.read("scores"):
            scan = scans.get(rec["study_uid"])
            items.append((rec["bin"],
                          scan.patient_id if scan else None))
        write_json(store.reports_dir() / "screening.json",
                   screening_report(items, patients))
        write_json(store.reports_dir() / "therapy_gap.json",
                   therapy_gap_report(items, patients))

    excluded = len(store.read("exclusions"))
    scored = len(store.read("scores"))
    summary["excluded_total"] = excluded
    summary["scored_total"] = scored
    if scored + excluded != n_input:
        raise PipelineStageError(
            "accounting", None,
            ValueError(f"{n_input} inputs != {scored} scored "
                       f"+ {excluded} excluded"))
    summary["exit_code"] = 2 if excluded else 0
    return summary
