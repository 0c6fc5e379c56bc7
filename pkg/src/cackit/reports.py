"""Reference-score extraction from gated-CT report text.

A rule pack is ordered data, not code: rejection patterns first (hardware
mentions make a report non-extractable no matter what else it says), then
extraction patterns grouped into tiers. The lowest-numbered tier with at
least one plausible match wins; distinct disagreeing values within that
tier make the report ambiguous.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import SampleTooLarge


@dataclass(frozen=True)
class MatchedSpan:
    start_byte: int
    end_byte: int
    text: str


@dataclass(frozen=True)
class ExtractionResult:
    status: str                      # "extracted" or "not_extractable"
    score: float | None = None
    reason: str | None = None        # hardware_mention | no_score_pattern
    #                                 | ambiguous_multiple
    matched_span: MatchedSpan | None = None

    def to_record(self) -> dict:
        rec = {"status": self.status, "score": self.score,
               "reason": self.reason}
        if self.matched_span is not None:
            rec["matched_span"] = [self.matched_span.start_byte,
                                   self.matched_span.end_byte,
                                   self.matched_span.text]
        return rec


class RulePack:
    def __init__(self, raw: dict):
        self.version = raw.get("version", 1)
        number = raw["number_pattern"]
        self.max_plausible = float(raw.get("max_plausible", 100000))
        flags = re.IGNORECASE
        self.reject = [(r["id"], re.compile(r["pattern"], flags))
                       for r in raw.get("reject", [])]
        by_tier: dict[int, list] = {}
        for r in raw.get("extract", []):
            pattern = r["pattern"].replace("@NUM@", number)
            by_tier.setdefault(int(r["tier"]), []).append(
                (r["id"], re.compile(pattern, flags)))
        self.tiers = [by_tier[t] for t in sorted(by_tier)]

    @classmethod
    def load(cls, path: str | Path | None = None) -> "RulePack":
        if path is None:
            text = (resources.files("cackit") / "data"
                    / "default_rules.json").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        return cls(json.loads(text))


def _parse_number(token: str) -> float:
    return float(token.replace(",", ""))


def _byte_span(text: str, start: int, end: int) -> MatchedSpan:
    start_b = len(text[:start].encode("utf-8"))
    end_b = start_b + len(text[start:end].encode("utf-8"))
    return MatchedSpan(start_b, end_b, text[start:end])


def extract_agatston(report_text: str,
                     rules: RulePack | None = None) -> ExtractionResult:
    """Apply the rule pack to one report. Pure; all outcomes are values."""
    rules = rules or RulePack.load()

    for rule_id, pattern in rules.reject:
        if pattern.search(report_text):
            return ExtractionResult("not_extractable",
                                    reason="hardware_mention")

    for tier in rules.tiers:
        values = []
        spans = []
        for rule_id, pattern in tier:
            for m in pattern.finditer(report_text):
                value = _parse_number(m.group("score"))
                if value > rules.max_plausible:
                    continue
                values.append(value)
                spans.append(m.span())
        if not values:
            continue
        if len(set(values)) > 1:
            return ExtractionResult("not_extractable",
                                    reason="ambiguous_multiple")
        first = min(range(len(spans)), key=lambda i: spans[i])
        span = _byte_span(report_text, *spans[first])
        return ExtractionResult("extracted", score=values[0],
                                matched_span=span)

    return ExtractionResult("not_extractable", reason="no_score_pattern")


def audit_sample(results: Sequence[tuple[dict | str, ExtractionResult]],
                 n: int, seed: int) -> list[dict]:
    """Seeded sample without replacement, formatted for manual verification.

    Rows carry the report text and the extracted value plus an empty
    ``verdict`` column for the auditor to fill in.
    """
    if n > len(results):
        raise SampleTooLarge(f"asked for {n} of {len(results)} reports")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(results))[:n]
    rows = []
    for i in order:
        report, result = results[int(i)]
        if isinstance(report, dict):
            report_id = report.get("report_id", "")
            text = report.get("report_text", "")
        else:
            report_id, text = "", report
        rows.append({
            "report_id": report_id,
            "report_text": text,
            "status": result.status,
            "score": result.score,
            "reason": result.reason,
            "verdict": "",
        })
    return rows
