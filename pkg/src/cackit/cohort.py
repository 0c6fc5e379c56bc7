"""Analysis-cohort assembly: pairing, splitting, dedup, survival rows.

All transforms here are deterministic. Randomized steps (the center split)
take an explicit seed and iterate inputs in sorted order so that record
order on disk never changes an assignment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import NegativeDuration
from .store import read_jsonl

OUTCOME_KINDS = ("all_cause_death", "composite_mi_cva_death")
STRATA_KINDS = ("none", "lipid_ever", "lipid_before_event")

# drug classes counted as lipid-lowering when reading prescription records
LIPID_LOWERING_CLASSES = frozenset({
    "statin", "ezetimibe", "fibrate", "pcsk9_inhibitor", "bile_acid_resin",
    "lipid_lowering",
})


@dataclass
class ScanRecord:
    study_uid: str
    patient_id: str
    center_id: str
    date: date
    reference_score: float | None = None   # set on gated scans post-extraction


@dataclass
class PatientRecord:
    patient_id: str
    center_id: str
    sex: str
    birth_date: date
    followup_end: date
    death_date: date | None = None
    mi_dates: list[date] = None
    stroke_dates: list[date] = None
    lipid_issue_dates: list[date] = None

    def __post_init__(self):
        self.mi_dates = sorted(self.mi_dates or [])
        self.stroke_dates = sorted(self.stroke_dates or [])
        self.lipid_issue_dates = sorted(self.lipid_issue_dates or [])
        for d in (*self.mi_dates, *self.stroke_dates,
                  *([self.death_date] if self.death_date else [])):
            if d > self.followup_end:
                raise ValueError(
                    f"patient {self.patient_id}: event {d} after "
                    f"followup end {self.followup_end}")


@dataclass
class PairedStudy:
    patient_id: str
    center_id: str
    nongated_study_uid: str
    gated_study_uid: str
    gap_days: int
    reference_score: float
    ai_rounded: int | None = None
    ai_total: float | None = None

    def to_record(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "center_id": self.center_id,
            "nongated_study_uid": self.nongated_study_uid,
            "gated_study_uid": self.gated_study_uid,
            "gap_days": self.gap_days,
            "reference_score": self.reference_score,
            "ai_rounded": self.ai_rounded,
            "ai_total": self.ai_total,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "PairedStudy":
        return cls(**rec)


@dataclass
class SurvivalRow:
    patient_id: str
    group_label: str
    duration_days: int
    event: bool
    outcome_kind: str

    def to_record(self) -> dict:
        return {"patient_id": self.patient_id,
                "group_label": self.group_label,
                "duration_days": self.duration_days,
                "event": self.event,
                "outcome_kind": self.outcome_kind}

    @classmethod
    def from_record(cls, rec: dict) -> "SurvivalRow":
        return cls(**rec)


# --- pairing -----------------------------------------------------------------

def build_pairs(nongated: list[ScanRecord], gated: list[ScanRecord],
                window_days: int = 365) -> list[PairedStudy]:
    """Temporally nearest (non-gated, gated) pair per patient.

    Gated scans without a reference score cannot anchor a pair. The window
    is inclusive: a gap of exactly ``window_days`` qualifies. Ties go to
    the smaller gap, then the earlier gated date, then smaller study uids.
    """
    gated_by_patient: dict[str, list[ScanRecord]] = {}
    for g in gated:
        if g.reference_score is not None:
            gated_by_patient.setdefault(g.patient_id, []).append(g)

    best: dict[str, tuple] = {}
    for ng in nongated:
        for g in gated_by_patient.get(ng.patient_id, []):
            gap = abs((ng.date - g.date).days)
            if gap > window_days:
                continue
            key = (gap, g.date.toordinal(), g.study_uid, ng.study_uid)
            held = best.get(ng.patient_id)
            if held is None or key < held[0]:
                best[ng.patient_id] = (key, ng, g)

    pairs = []
    for patient_id in sorted(best):
        key, ng, g = best[patient_id]
        pairs.append(PairedStudy(
            patient_id=patient_id,
            center_id=ng.center_id,
            nongated_study_uid=ng.study_uid,
            gated_study_uid=g.study_uid,
            gap_days=key[0],
            reference_score=float(g.reference_score),
        ))
    return pairs


# --- splitting ---------------------------------------------------------------

def split_by_center(pairs: list[PairedStudy], ratio: float = 0.5,
                    seed: int | np.random.SeedSequence = 0,
                    ) -> tuple[list[PairedStudy], list[PairedStudy]]:
    """Stratified 50:50 split by center.

    Within each center, patients are shuffled by the seeded RNG and dealt
    alternately. The starting side carries over between centers and flips
    after each odd-sized one, which bounds the per-center AND the global
    imbalance by one patient. Only ratio 0.5 is supported.
    """
    if ratio != 0.5:
        raise ValueError("only a 50:50 split is supported")
    rng = np.random.default_rng(seed)

    by_center: dict[str, list[PairedStudy]] = {}
    for pair in pairs:
        by_center.setdefault(pair.center_id, []).append(pair)

    sides: tuple[list[PairedStudy], list[PairedStudy]] = ([], [])
    side = int(rng.integers(0, 2))
    for center in sorted(by_center):
        members = sorted(by_center[center], key=lambda p: p.patient_id)
        order = rng.permutation(len(members))
        for i, idx in enumerate(order):
            sides[(side + i) % 2].append(members[int(idx)])
        if len(members) % 2 == 1:
            side = 1 - side
    return sides


# --- scan-level filters --------------------------------------------------------

def dedup_oldest(scans: list[ScanRecord]) -> list[ScanRecord]:
    """One scan per patient: the earliest date, ties to the smaller uid."""
    best: dict[str, ScanRecord] = {}
    for scan in scans:
        held = best.get(scan.patient_id)
        if held is None or (scan.date, scan.study_uid) < (held.date,
                                                          held.study_uid):
            best[scan.patient_id] = scan
    return [best[pid] for pid in sorted(best)]


def exclude_training_centers(scans: list[ScanRecord],
                             train_centers: set[str]) -> list[ScanRecord]:
    return [s for s in scans if s.center_id not in train_centers]


def assert_disjoint_patients(datasets: dict[str, set[str]]) -> None:
    """Raise when any two named datasets share a patient."""
    names = sorted(datasets)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            shared = datasets[a] & datasets[b]
            if shared:
                sample = ", ".join(sorted(shared)[:5])
                raise ValueError(
                    f"datasets {a!r} and {b!r} share {len(shared)} "
                    f"patients (e.g. {sample})")


# --- survival rows --------------------------------------------------------------

def _first_composite_event(patient: PatientRecord,
                           index: date) -> tuple[date | None, bool]:
    """(first qualifying event date, had_pre_index_mi_or_stroke)."""
    pre_index = any(d < index for d in patient.mi_dates) or \
        any(d < index for d in patient.stroke_dates)
    candidates = [d for d in (*patient.mi_dates, *patient.stroke_dates)
                  if d >= index]
    if patient.death_date is not None and patient.death_date >= index:
        candidates.append(patient.death_date)
    return (min(candidates) if candidates else None, pre_index)


def _lipid_label(patient: PatientRecord, strata: str, base: str,
                 event_date: date | None) -> str:
    if strata == "none":
        return base
    if strata == "lipid_ever":
        treated = bool(patient.lipid_issue_dates)
        suffix = "lipid_ever_treated" if treated else "not_treated"
    elif strata == "lipid_before_event":
        cutoff = event_date
        if cutoff is None:
            treated = bool(patient.lipid_issue_dates)
        else:
            treated = any(d < cutoff for d in patient.lipid_issue_dates)
        suffix = "lipid_before_event_treated" if treated else "not_treated"
    else:
        raise ValueError(f"unknown strata {strata!r}")
    return f"{base}_{suffix}"


def make_survival_rows(patients: dict[str, PatientRecord],
                       index_dates: dict[str, date],
                       scores: dict[str, str],
                       outcome_kind: str,
                       strata: str = "none") -> list[SurvivalRow]:
    """Durations from index (non-gated scan date) to event or censoring.

    ``scores`` maps patient id to the base group label (normally the CAC
    bin value). For the composite outcome, patients with an MI or stroke
    strictly before their index date are excluded, mirroring the
    pre-existing-disease filter; a death before index is a data error.
    """
    if outcome_kind not in OUTCOME_KINDS:
        raise ValueError(f"unknown outcome {outcome_kind!r}")
    if strata not in STRATA_KINDS:
        raise ValueError(f"unknown strata {strata!r}")

    rows = []
    for patient_id in sorted(index_dates):
        if patient_id not in patients or patient_id not in scores:
            continue
        patient = patients[patient_id]
        index = index_dates[patient_id]

        if patient.death_date is not None and patient.death_date < index:
            raise NegativeDuration(
                f"patient {patient_id}: death {patient.death_date} "
                f"precedes index {index}")

        if outcome_kind == "all_cause_death":
            event_date = patient.death_date
        else:
            event_date, pre_index = _first_composite_event(patient, index)
            if pre_index:
                continue

        end = event_date if event_date is not None else patient.followup_end
        duration = (end - index).days
        if duration < 0:
            raise NegativeDuration(
                f"patient {patient_id}: follow-up ends {end}, "
                f"before index {index}")

        rows.append(SurvivalRow(
            patient_id=patient_id,
            group_label=_lipid_label(patient, strata, scores[patient_id],
                                     event_date),
            duration_days=duration,
            event=event_date is not None,
            outcome_kind=outcome_kind,
        ))
    return rows


# --- record loaders --------------------------------------------------------------

def _parse_date(raw: str) -> date:
    return date.fromisoformat(raw)


def load_scan_records(path: str | Path) -> list[ScanRecord]:
    out = []
    for rec in read_jsonl(path):
        score = rec.get("reference_score")
        out.append(ScanRecord(
            study_uid=rec["study_uid"],
            patient_id=rec["patient_id"],
            center_id=rec.get("center_id", ""),
            date=_parse_date(rec["date"]),
            reference_score=None if score is None else float(score),
        ))
    return out


def load_icd9_crossref(path: str | Path | None = None) -> dict[str, list[str]]:
    if path is None:
        text = (resources.files("cackit") / "data"
                / "icd9_crossref.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return json.loads(text)


def _code_matches(code: str, icd10_prefix: str,
                  icd9_prefixes: list[str]) -> bool:
    code = code.strip().upper().replace(".", "")
    if code and code[0].isalpha():
        return code.startswith(icd10_prefix.replace(".", ""))
    return any(code.startswith(p.replace(".", "")) for p in icd9_prefixes)


def load_patient_records(patients_path: str | Path,
                         diagnoses_path: str | Path | None = None,
                         prescriptions_path: str | Path | None = None,
                         crossref: dict[str, list[str]] | None = None,
                         ) -> dict[str, PatientRecord]:
    """Join patients with diagnoses and prescriptions into PatientRecords.

    MI is any diagnosis matching ICD-10 I21 or its ICD-9 cross-reference;
    stroke likewise for I63. Diagnosis codes starting with a letter are
    treated as ICD-10, others as ICD-9.
    """
    crossref = crossref if crossref is not None else load_icd9_crossref()
    mi9 = crossref.get("I21", [])
    stroke9 = crossref.get("I63", [])

    mi: dict[str, list[date]] = {}
    stroke: dict[str, list[date]] = {}
    if diagnoses_path is not None:
        for rec in read_jsonl(diagnoses_path):
            when = _parse_date(rec["date"])
            if _code_matches(rec["code"], "I21", mi9):
                mi.setdefault(rec["patient_id"], []).append(when)
            elif _code_matches(rec["code"], "I63", stroke9):
                stroke.setdefault(rec["patient_id"], []).append(when)

    lipid: dict[str, list[date]] = {}
    if prescriptions_path is not None:
        for rec in read_jsonl(prescriptions_path):
            if rec.get("drug_class") in LIPID_LOWERING_CLASSES:
                lipid.setdefault(rec["patient_id"], []).append(
                    _parse_date(rec["issue_date"]))

    out = {}
    for rec in read_jsonl(patients_path):
        pid = rec["patient_id"]
        death = rec.get("death_date")
        out[pid] = PatientRecord(
            patient_id=pid,
            center_id=rec.get("center_id", ""),
            sex=rec.get("sex", ""),
            birth_date=_parse_date(rec["birth_date"]),
            followup_end=_parse_date(rec["followup_end"]),
            death_date=None if death is None else _parse_date(death),
            mi_dates=mi.get(pid, []),
            stroke_dates=stroke.get(pid, []),
            lipid_issue_dates=lipid.get(pid, []),
        )
    return out


def oldest_per_patient(records: list[dict], date_key: str = "report_date",
                       id_key: str = "study_uid") -> dict[str, dict]:
    """Pick each patient's oldest record, ties to the smaller id."""
    best: dict[str, dict] = {}
    for rec in records:
        pid = rec["patient_id"]
        key = (rec[date_key], rec.get(id_key, ""))
        held = best.get(pid)
        if held is None or key < (held[date_key], held.get(id_key, "")):
            best[pid] = rec
    return best
