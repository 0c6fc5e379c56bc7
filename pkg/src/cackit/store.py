"""Append-only record store shared by all pipeline stages.

Layout under one root directory:

    manifest.json        root seed, per-stage config fingerprints
    records/<kind>.jsonl one canonical-JSON record per line
    volumes/<study>/     selected-series fixture copies (manifest + voxels)
    masks/<study>.cacmask
    reports/             evaluation bundles emitted by the CLI

Records are serialized with sorted keys and no whitespace and carry no
timestamps, so a rerun with the same inputs and seed is byte identical.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Iterable

import numpy as np

RECORD_KINDS = (
    "ingest", "scores", "extractions", "pairs", "splits", "survival_rows",
    "queues", "assignments", "verdicts", "exclusions",
)


def canonical_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def stage_seed(root_seed: int, stage: str) -> np.random.SeedSequence:
    """Derive an independent seed stream for one named pipeline stage."""
    digest = hashlib.sha256(stage.encode("utf-8")).digest()
    return np.random.SeedSequence([root_seed,
                                   int.from_bytes(digest[:8], "big")])


class ScoreStore:
    def __init__(self, root: str | Path, root_seed: int | None = None):
        self.root = Path(root)
        (self.root / "records").mkdir(parents=True, exist_ok=True)
        (self.root / "volumes").mkdir(exist_ok=True)
        (self.root / "masks").mkdir(exist_ok=True)
        (self.root / "reports").mkdir(exist_ok=True)
        if not self.manifest_path.exists():
            self._write_manifest({"root_seed": root_seed, "fingerprints": {}})
        elif root_seed is not None:
            manifest = self.manifest()
            if manifest.get("root_seed") is None:
                manifest["root_seed"] = root_seed
                self._write_manifest(manifest)
            elif manifest["root_seed"] != root_seed:
                raise ValueError(
                    f"store already seeded with {manifest['root_seed']}, "
                    f"refusing to reseed with {root_seed}")

    # --- manifest -----------------------------------------------------------

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    def manifest(self) -> dict:
        return json.loads(self.manifest_path.read_text("utf-8"))

    def _write_manifest(self, manifest: dict) -> None:
        tmp = self.manifest_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n",
                       "utf-8")
        os.replace(tmp, self.manifest_path)

    @property
    def root_seed(self) -> int:
        seed = self.manifest().get("root_seed")
        if seed is None:
            raise ValueError("store has no root seed; pass --seed")
        return int(seed)

    def seed_for(self, stage: str) -> np.random.SeedSequence:
        return stage_seed(self.root_seed, stage)

    def set_fingerprint(self, stage: str, fingerprint: str) -> None:
        manifest = self.manifest()
        manifest.setdefault("fingerprints", {})[stage] = fingerprint
        self._write_manifest(manifest)

    def fingerprint(self, stage: str) -> str | None:
        return self.manifest().get("fingerprints", {}).get(stage)

    # --- records ------------------------------------------------------------

    def record_path(self, kind: str) -> Path:
        if kind not in RECORD_KINDS:
            raise ValueError(f"unknown record kind {kind!r}")
        return self.root / "records" / f"{kind}.jsonl"

    def append(self, kind: str, record: dict) -> None:
        with open(self.record_path(kind), "a", encoding="utf-8") as fh:
            fh.write(canonical_dumps(record) + "\n")

    def append_many(self, kind: str, records: Iterable[dict]) -> None:
        with open(self.record_path(kind), "a", encoding="utf-8") as fh:
            for record in records:
                fh.write(canonical_dumps(record) + "\n")

    def read(self, kind: str) -> list[dict]:
        path = self.record_path(kind)
        if not path.exists():
            return []
        return read_jsonl(path)

    def clear(self, kind: str) -> None:
        """Drop a record file; used when a stage is rerun from scratch."""
        path = self.record_path(kind)
        if path.exists():
            path.unlink()

    # --- per-study artifacts --------------------------------------------------

    def volume_dir(self, study_uid: str) -> Path:
        return self.root / "volumes" / study_uid

    def mask_path(self, study_uid: str) -> Path:
        return self.root / "masks" / f"{study_uid}.cacmask"

    def reports_dir(self) -> Path:
        return self.root / "reports"

    def ingested_studies(self) -> list[dict]:
        return self.read("ingest")
