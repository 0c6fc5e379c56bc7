"""Reviewer verification workflow over scored studies.

State is event-sourced: queues, assignments, and verdicts live as
append-only records in the store, and replaying them reconstructs the
in-memory state exactly. Assignment and verdict writes go through one
lock so concurrent reviewers can never grab the same item.
"""

from __future__ import annotations

import hashlib
import io
import threading
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .errors import (
    AlreadyVerdicted,
    NotAssigned,
    QueueEmpty,
    SampleTooLarge,
    SliceOutOfRange,
)
from .ingest import CtVolume, read_series_fixture
from .masks import CalciumMask, parse_mask
from .store import ScoreStore, canonical_dumps

VERDICTS = ("correct", "uncertain", "incorrect")
DEFAULT_WINDOW = (90, 750)    # center, width; shows soft tissue and calcium


@dataclass
class ReviewQueue:
    queue_id: str
    study_uids: list[str]
    bins: list[str] | None
    score_range: tuple[int, int] | None
    n: int
    seed: int


@dataclass
class ReviewItem:
    item_id: str
    queue_id: str
    study_uid: str
    positive_slice_indices: list[int]
    ai_rounded: int
    bin: str
    assigned_reviewer: str | None = None
    verdict: str | None = None
    verdict_time: str | None = None

    def to_record(self) -> dict:
        return {
            "item_id": self.item_id,
            "queue_id": self.queue_id,
            "study_uid": self.study_uid,
            "positive_slice_indices": self.positive_slice_indices,
            "ai_rounded": self.ai_rounded,
            "bin": self.bin,
            "assigned_reviewer": self.assigned_reviewer,
            "verdict": self.verdict,
            "verdict_time": self.verdict_time,
        }


@dataclass
class ReviewSummary:
    n_reviewed: int
    n_correct: int
    n_uncertain: int
    n_incorrect: int
    proportion_correct: float | None

    def to_record(self) -> dict:
        return {"n_reviewed": self.n_reviewed, "n_correct": self.n_correct,
                "n_uncertain": self.n_uncertain,
                "n_incorrect": self.n_incorrect,
                "proportion_correct": self.proportion_correct}


def sample_for_review(scored: list[dict], n: int, seed: int,
                      bins: list[str] | None = None,
                      score_range: tuple[int, int] | None = None,
                      ) -> list[str]:
    """Seeded sample of study uids whose score matches the filter.

    Only mask-positive studies (at least one lesion) are reviewable.
    Exactly one of ``bins`` and ``score_range`` should be given.
    """
    eligible = []
    for rec in scored:
        if not rec.get("lesions"):
            continue
        if bins is not None and rec["bin"] not in bins:
            continue
        if score_range is not None and not (
                score_range[0] <= rec["rounded"] <= score_range[1]):
            continue
        eligible.append(rec["study_uid"])
    if n > len(eligible):
        raise SampleTooLarge(
            f"asked for {n} items, only {len(eligible)} match the filter")
    eligible.sort()
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(eligible))[:n]
    return [eligible[int(i)] for i in order]


def render_slice(volume: CtVolume, mask: CalciumMask | None,
                 slice_index: int, window: tuple[float, float] = DEFAULT_WINDOW,
                 overlay: bool = False) -> bytes:
    """Window one slice of HU to 8-bit PNG, optionally tinting mask voxels.

    Overlayed pixels blend 60 percent windowed gray with 40 percent pure
    red; all other pixels are identical with and without the overlay.
    """
    from PIL import Image

    if not 0 <= slice_index < volume.n_slices:
        raise SliceOutOfRange(
            f"slice {slice_index} outside [0, {volume.n_slices})")
    center, width = window
    if width <= 0:
        raise ValueError("window width must be positive")

    hu = volume.voxels[slice_index].astype(np.float64)
    scaled = np.clip((hu - (center - width / 2.0)) / width, 0.0, 1.0)
    gray = np.rint(scaled * 255.0).astype(np.uint8)

    if not overlay or mask is None:
        image = Image.fromarray(gray, mode="L")
    else:
        dense = mask.to_dense()[slice_index]
        rgb = np.stack([gray, gray, gray], axis=-1).astype(np.float64)
        rgb[dense] = 0.6 * rgb[dense]
        rgb[dense, 0] += 0.4 * 255.0
        image = Image.fromarray(np.rint(rgb).astype(np.uint8), mode="RGB")

    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


class ReviewService:
    """Queue, assignment, verdict, and rendering operations over a store."""

    def __init__(self, store: ScoreStore):
        self.store = store
        self._lock = threading.Lock()
        self._volumes: dict[str, CtVolume] = {}
        self._masks: dict[str, CalciumMask] = {}
        self._scores: dict[str, dict] = {}
        self._queues: dict[str, ReviewQueue] = {}
        self._assigned: dict[tuple[str, str], str] = {}
        self._verdicts: dict[tuple[str, str], dict] = {}
        self.refresh()

    def refresh(self) -> None:
        """Rebuild all state by replaying the store's event records."""
        with self._lock:
            self._scores = {r["study_uid"]: r
                            for r in self.store.read("scores")}
            self._queues = {}
            for rec in self.store.read("queues"):
                rng = rec.get("score_range")
                self._queues[rec["queue_id"]] = ReviewQueue(
                    queue_id=rec["queue_id"],
                    study_uids=list(rec["study_uids"]),
                    bins=rec.get("bins"),
                    score_range=None if rng is None else tuple(rng),
                    n=rec["n"],
                    seed=rec["seed"],
                )
            self._assigned = {}
            for rec in self.store.read("assignments"):
                key = (rec["queue_id"], rec["study_uid"])
                self._assigned[key] = rec["reviewer_id"]
            self._verdicts = {}
            for rec in self.store.read("verdicts"):
                # corrections append; the latest record wins on read
                self._verdicts[(rec["queue_id"], rec["study_uid"])] = rec

    # --- queue lifecycle -----------------------------------------------------

    def create_queue(self, n: int, seed: int, bins: list[str] | None = None,
                     score_range: tuple[int, int] | None = None) -> str:
        scored = sorted(self._scores.values(), key=lambda r: r["study_uid"])
        uids = sample_for_review(scored, n, seed, bins=bins,
                                 score_range=score_range)
        spec = {"bins": bins, "score_range": score_range, "n": n,
                "seed": seed, "study_uids": uids}
        queue_id = hashlib.sha256(
            canonical_dumps(spec).encode("utf-8")).hexdigest()[:12]
        with self._lock:
            if queue_id not in self._queues:
                self.store.append("queues", {"queue_id": queue_id, **spec})
                self._queues[queue_id] = ReviewQueue(
                    queue_id, uids, bins, score_range, n, seed)
        return queue_id

    def _require_queue(self, queue_id: str) -> ReviewQueue:
        queue = self._queues.get(queue_id)
        if queue is None:
            raise QueueEmpty(f"unknown queue {queue_id!r}")
        return queue

    def _item(self, queue_id: str, study_uid: str) -> ReviewItem:
        score = self._scores[study_uid]
        key = (queue_id, study_uid)
        verdict = self._verdicts.get(key)
        return ReviewItem(
            item_id=f"{queue_id}:{study_uid}",
            queue_id=queue_id,
            study_uid=study_uid,
            positive_slice_indices=self.mask_for(study_uid).positive_slices(),
            ai_rounded=score["rounded"],
            bin=score["bin"],
            assigned_reviewer=self._assigned.get(key),
            verdict=None if verdict is None else verdict["verdict"],
            verdict_time=None if verdict is None else verdict["at"],
        )

    def next_item(self, queue_id: str, reviewer_id: str) -> ReviewItem:
        """Assign and return the first available item for this reviewer.

        An item the reviewer already holds unverdicted is returned again,
        so a reloaded client resumes instead of hoarding assignments.
        """
        with self._lock:
            queue = self._require_queue(queue_id)
            for study_uid in queue.study_uids:
                key = (queue_id, study_uid)
                if key in self._verdicts:
                    continue
                holder = self._assigned.get(key)
                if holder == reviewer_id:
                    return self._item(queue_id, study_uid)
                if holder is None:
                    self.store.append("assignments", {
                        "queue_id": queue_id, "study_uid": study_uid,
                        "reviewer_id": reviewer_id})
                    self._assigned[key] = reviewer_id
                    return self._item(queue_id, study_uid)
            raise QueueEmpty(f"no assignable items left in {queue_id}")

    def post_verdict(self, item_id: str, reviewer_id: str,
                     verdict: str) -> dict:
        if verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}")
        queue_id, _, study_uid = item_id.partition(":")
        if not study_uid:
            raise ValueError(f"malformed item id {item_id!r}")
        with self._lock:
            self._require_queue(queue_id)
            key = (queue_id, study_uid)
            holder = self._assigned.get(key)
            if holder != reviewer_id:
                raise NotAssigned(
                    f"item {item_id} is not assigned to {reviewer_id!r}")
            if key in self._verdicts:
                raise AlreadyVerdicted(f"item {item_id} already verdicted")
            record = {
                "queue_id": queue_id,
                "study_uid": study_uid,
                "reviewer_id": reviewer_id,
                "verdict": verdict,
                "at": datetime.now(timezone.utc).isoformat(),
            }
            self.store.append("verdicts", record)
            self._verdicts[key] = record
            return {"ok": True, "item_id": item_id, "verdict": verdict}

    def review_summary(self, queue_id: str) -> ReviewSummary:
        queue = self._require_queue(queue_id)
        counts = {v: 0 for v in VERDICTS}
        for study_uid in queue.study_uids:
            rec = self._verdicts.get((queue_id, study_uid))
            if rec is not None:
                counts[rec["verdict"]] += 1
        n = sum(counts.values())
        return ReviewSummary(
            n_reviewed=n,
            n_correct=counts["correct"],
            n_uncertain=counts["uncertain"],
            n_incorrect=counts["incorrect"],
            proportion_correct=None if n == 0 else counts["correct"] / n,
        )

    # --- imaging --------------------------------------------------------------

    def volume_for(self, study_uid: str) -> CtVolume:
        if study_uid not in self._volumes:
            self._volumes[study_uid] = read_series_fixture(
                self.store.volume_dir(study_uid))
        return self._volumes[study_uid]

    def mask_for(self, study_uid: str) -> CalciumMask:
        if study_uid not in self._masks:
            text = self.store.mask_path(study_uid).read_text("utf-8")
            self._masks[study_uid] = parse_mask(text)
        return self._masks[study_uid]

    def render(self, study_uid: str, slice_index: int,
               window: tuple[float, float] = DEFAULT_WINDOW,
               overlay: bool = False) -> bytes:
        mask = self.mask_for(study_uid) if overlay else None
        return render_slice(self.volume_for(study_uid), mask, slice_index,
                            window=window, overlay=overlay)
