#!/usr/bin/env python3
"""Generate the frozen synthetic report corpus at tests/data/nlp_corpus.jsonl.

Each line is one gated-CT report with design-time ground truth (expected
status, score, reason). Two reports spell their score out in words on
purpose; regex extraction cannot get those, which pins corpus accuracy at
298/300. The script asserts the engine agrees with every designed row
except those two, so a template typo fails generation instead of silently
shipping a wrong expectation.

Usage: python tools/make_nlp_corpus.py [out_path]
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

SEED = 11387

SCORE_TEMPLATES = [
    "TOTAL AGATSTON SCORE: {score}",
    "Total Agatston score = {score}.",
    "Total Agatston score of {score}.",
    "Total calcium score: {score}",
    "Total calcium score is {score}.",
    "Total CAC score of {score}.",
    "Agatston score: {score}.",
    "Agatston score is {score}.",
    "Agatston score was {score}.",
    "agatston score - {score}",
    "Coronary artery calcium score: {score}.",
    "Coronary calcium score of {score}.",
    "Calcium score of {score}.",
    "CAC score = {score}",
    "The Agatston score is {score}, placing the patient in an elevated risk category.",
]

# boilerplate kept free of "agatston"/"calcium score"/"cac score" followed
# by digits, and free of stent/bypass words
LEAD_SENTENCES = [
    "CT chest without contrast for coronary calcium evaluation.",
    "Prospectively gated axial acquisition, low-dose technique.",
    "Non-contrast chest CT, 3 mm axial reconstructions.",
    "INDICATION: Atherosclerotic risk assessment.",
    "Comparison: radiograph from {cmp_date}.",
    "Low-dose screening CT of the chest.",
]

FILLER_SENTENCES = [
    "The heart is normal in size.",
    "No pericardial effusion.",
    "Lungs are clear without focal consolidation.",
    "A {nodule} mm nodule is seen in the right upper lobe, unchanged.",
    "Mild dependent atelectasis at the lung bases.",
    "No suspicious pulmonary nodule.",
    "Thoracic aorta is normal in caliber at {aorta} mm.",
    "Degenerative changes of the thoracic spine.",
    "Moderate calcification of the mitral annulus.",
    "No axillary or mediastinal adenopathy.",
]

CLOSING_SENTENCES = [
    "IMPRESSION: Coronary artery calcification as above.",
    "Findings discussed with the ordering provider.",
    "Electronically signed.",
    "Recommend clinical correlation with lipid panel.",
]

STENT_SENTENCES = [
    "Patient is status post stent placement in the LAD.",
    "A coronary stent is present in the proximal RCA.",
    "Prior stenting of the circumflex artery.",
    "The previously placed stents are patent.",
    "The proximal LAD has been stented.",
]

BYPASS_SENTENCES = [
    "Patient is s/p CABG.",
    "CABG x3 in 2015 with sternotomy wires intact.",
    "History of coronary artery bypass grafting.",
    "Bypass grafts are widely patent.",
    "Status s/p bypass surgery, grafts not fully evaluated.",
    "Median sternotomy compatible with prior coronary bypass.",
]

NOT_PERFORMED = [
    "Calcium scoring was therefore not performed.",
    "A numeric score was not calculated.",
    "Quantitative scoring deferred.",
]

NO_SCORE_BODIES = [
    "Low-dose CT chest for lung cancer screening. {filler} {filler2}",
    "CT chest without contrast. {filler} Coronary artery calcifications are noted. {filler2}",
    "Non-contrast chest CT. Calcium score was not calculated due to motion artifact. {filler}",
    "CT chest. Total calcium score could not be obtained; study degraded by respiratory motion. {filler}",
    "Screening examination. {filler} Scattered coronary calcifications, not quantified. {filler2}",
    "CT chest without contrast. {filler} No coronary calcification identified. {filler2}",
]


def _fmt_date(rng: random.Random) -> str:
    y = rng.randint(2009, 2019)
    m = rng.randint(1, 12)
    d = rng.randint(1, 28)
    return f"{y:04d}-{m:02d}-{d:02d}"


def _score_pool(rng: random.Random, n: int, n_zero: int, n_decimal: int,
                n_thousands: int) -> list[str]:
    """Score strings as they appear in report text."""
    out = ["0"] * n_zero
    for _ in range(n_decimal):
        out.append(f"{rng.randint(1, 3000)}.{rng.randint(0, 9)}")
    for _ in range(n_thousands):
        value = rng.randint(1000, 9999)
        out.append(f"{value:,}")
    while len(out) < n:
        out.append(str(rng.randint(1, 999)))
    rng.shuffle(out)
    return out[:n]


def _fill(sentence: str, rng: random.Random) -> str:
    return sentence.format(
        cmp_date=_fmt_date(rng),
        nodule=rng.randint(2, 9),
        aorta=rng.randint(28, 36),
        filler=rng.choice(FILLER_SENTENCES[:3]),
        filler2=rng.choice(FILLER_SENTENCES[3:]),
    )


def _vessel_breakdown(total: str, rng: random.Random) -> str:
    # integer totals only; four vessel parts that sum to the total
    t = int(total.replace(",", ""))
    cuts = sorted(rng.randint(0, t) for _ in range(3)) if t else [0, 0, 0]
    parts = [cuts[0], cuts[1] - cuts[0], cuts[2] - cuts[1], t - cuts[2]]
    lm, lad, lcx, rca = parts
    return f"LM: {lm}. LAD: {lad}. LCX: {lcx}. RCA: {rca}."


def _assemble(rng: random.Random, middle: list[str]) -> str:
    sentences = [_fill(rng.choice(LEAD_SENTENCES), rng)]
    sentences.append(_fill(rng.choice(FILLER_SENTENCES), rng))
    sentences.extend(middle)
    sentences.append(rng.choice(CLOSING_SENTENCES))
    return " ".join(sentences)


def build_rows() -> list[dict]:
    rng = random.Random(SEED)
    rows = []

    def add(kind: str, text: str, status: str, score: float | None,
            reason: str | None) -> None:
        i = len(rows) + 1
        rows.append({
            "report_id": f"R{i:04d}",
            "patient_id": f"P{2000 + i}",
            "study_uid": f"G-{i:04d}",
            "report_date": _fmt_date(rng),
            "report_text": text,
            "expected_status": status,
            "expected_score": score,
            "expected_reason": reason,
            "kind": kind,
        })

    def value_of(score: str) -> float:
        return float(score.replace(",", ""))

    # plain extractable reports
    for score in _score_pool(rng, 140, n_zero=18, n_decimal=20,
                             n_thousands=10):
        phrase = rng.choice(SCORE_TEMPLATES).format(score=score)
        add("extract", _assemble(rng, [phrase]), "extracted",
            value_of(score), None)

    # extractable with a per-vessel breakdown: extra numbers the rules
    # must not latch onto
    for score in _score_pool(rng, 40, n_zero=4, n_decimal=0, n_thousands=4):
        phrase = rng.choice(SCORE_TEMPLATES).format(score=score)
        breakdown = _vessel_breakdown(score, rng)
        add("extract_vessels", _assemble(rng, [breakdown, phrase]),
            "extracted", value_of(score), None)

    # the same value stated twice stays extractable
    for score in _score_pool(rng, 10, n_zero=1, n_decimal=2, n_thousands=1):
        first = rng.choice(SCORE_TEMPLATES).format(score=score)
        second = f"Again, total calcium score: {score}."
        add("extract_repeat", _assemble(rng, [first, second]), "extracted",
            value_of(score), None)

    # hardware rejections; some still state a score, rejection dominates
    for i in range(30):
        middle = [rng.choice(STENT_SENTENCES)]
        if i < 8:
            middle.append(rng.choice(SCORE_TEMPLATES).format(
                score=rng.randint(100, 2000)))
        else:
            middle.append(rng.choice(NOT_PERFORMED))
        add("reject_stent", _assemble(rng, middle), "not_extractable",
            None, "hardware_mention")
    for i in range(30):
        middle = [rng.choice(BYPASS_SENTENCES)]
        if i < 8:
            middle.append(rng.choice(SCORE_TEMPLATES).format(
                score=rng.randint(100, 2000)))
        else:
            middle.append(rng.choice(NOT_PERFORMED))
        add("reject_bypass", _assemble(rng, middle), "not_extractable",
            None, "hardware_mention")

    # nothing to extract
    for _ in range(40):
        body = _fill(rng.choice(NO_SCORE_BODIES), rng)
        add("no_score", body, "not_extractable", None, "no_score_pattern")

    # two different values in the same tier
    for _ in range(6):
        a = rng.randint(1, 400)
        b = a + rng.randint(1, 200)
        first = f"Agatston score: {a}."
        second = f"Addendum: corrected Agatston score: {b}."
        add("ambiguous", _assemble(rng, [first, second]), "not_extractable",
            None, "ambiguous_multiple")

    # a value past the plausibility cap is noise, not a score
    for _ in range(2):
        phrase = f"Calcium score of {rng.randint(1000000, 9000000)}."
        add("implausible", _assemble(rng, [phrase]), "not_extractable",
            None, "no_score_pattern")

    # designed misses: spelled-out numbers defeat the digit patterns
    add("word_miss",
        _assemble(rng, ["The total Agatston score is twelve."]),
        "extracted", 12.0, None)
    add("word_miss",
        _assemble(rng, ["Total calcium score of zero."]),
        "extracted", 0.0, None)

    assert len(rows) == 300, len(rows)
    return rows


def verify(rows: list[dict]) -> None:
    from cackit.reports import extract_agatston

    for row in rows:
        got = extract_agatston(row["report_text"])
        agrees = (got.status == row["expected_status"]
                  and got.score == row["expected_score"]
                  and got.reason == row["expected_reason"])
        if row["kind"] == "word_miss":
            if agrees:
                raise SystemExit(
                    f"{row['report_id']}: designed miss was extracted")
        elif not agrees:
            raise SystemExit(
                f"{row['report_id']} ({row['kind']}): expected "
                f"{row['expected_status']}/{row['expected_score']}/"
                f"{row['expected_reason']}, engine said "
                f"{got.status}/{got.score}/{got.reason}\n"
                f"  text: {row['report_text']}")


def main() -> None:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else \
        Path(__file__).resolve().parent.parent / "tests" / "data" / "nlp_corpus.jsonl"
    rows = build_rows()
    verify(rows)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True,
                                separators=(",", ":")) + "\n")
    n_miss = sum(1 for r in rows if r["kind"] == "word_miss")
    print(f"wrote {len(rows)} reports to {out} ({n_miss} designed misses)")


if __name__ == "__main__":
    main()
