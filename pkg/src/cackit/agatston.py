"""Agatston scoring: lesion extraction, per-slice weighting, binning.

A lesion is one connected component of mask voxels at or above the HU
threshold. Each slice it touches contributes area times a density weight
from the slice's peak HU (130-199 -> 1, 200-299 -> 2, 300-399 -> 3,
>= 400 -> 4). The scan total is the sum over all retained contributions.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DimsMismatch
from .ingest import CtVolume
from .masks import CalciumMask

# density bands are defined from 130 HU upward; slices peaking below the
# first band carry no score even if the threshold was lowered
WEIGHT_BAND_FLOOR = 130


class CacBin(enum.Enum):
    zero = "0"
    b1_100 = "1-100"
    b101_400 = "101-400"
    gt400 = ">400"


@dataclass(frozen=True)
class ScoringConfig:
    hu_threshold: int = 130
    connectivity: str = "conn26_3d"          # or "conn8_2d"
    min_slice_area_mm2: float = 1.0
    thickness_normalization: str = "none"    # or "ratio_3mm"

    def __post_init__(self):
        if self.hu_threshold < 0:
            raise ValueError("hu_threshold must be >= 0")
        if self.min_slice_area_mm2 < 0:
            raise ValueError("min_slice_area_mm2 must be >= 0")
        if self.connectivity not in ("conn26_3d", "conn8_2d"):
            raise ValueError(f"unknown connectivity {self.connectivity!r}")
        if self.thickness_normalization not in ("none", "ratio_3mm"):
            raise ValueError(
                f"unknown normalization {self.thickness_normalization!r}")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    @classmethod
    def from_file(cls, path) -> "ScoringConfig":
        from pathlib import Path
        return cls(**json.loads(Path(path).read_text("utf-8")))


class SliceEntry(NamedTuple):
    slice_index: int
    area_mm2: float
    peak_hu: int
    weight: int
    slice_score: float


@dataclass
class Lesion:
    lesion_id: int
    voxel_indices: np.ndarray      # sorted flattened indices, int64
    per_slice: list[SliceEntry]


@dataclass
class ScanScore:
    study_uid: str
    series_uid: str
    total: float
    rounded: int
    bin: CacBin
    lesions: list[Lesion]
    config_fingerprint: str

    def to_record(self) -> dict:
        """Store representation; voxel indices are summarized, not kept."""
        return {
            "study_uid": self.study_uid,
            "series_uid": self.series_uid,
            "total": self.total,
            "rounded": self.rounded,
            "bin": self.bin.value,
            "config_fingerprint": self.config_fingerprint,
            "lesions": [
                {
                    "lesion_id": l.lesion_id,
                    "n_voxels": int(l.voxel_indices.size),
                    "per_slice": [list(e) for e in l.per_slice],
                }
                for l in self.lesions
            ],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ScanScore":
        lesions = [
            Lesion(l["lesion_id"], np.zeros(0, dtype=np.int64),
                   [SliceEntry(*e) for e in l["per_slice"]])
            for l in rec["lesions"]
        ]
        return cls(rec["study_uid"], rec["series_uid"], rec["total"],
                   rec["rounded"], CacBin(rec["bin"]), lesions,
                   rec["config_fingerprint"])


def round_half_up(x: float) -> int:
    if x < 0:
        raise ValueError("scores are nonnegative")
    return int(math.floor(x + 0.5))


def weight_for_peak(peak_hu: int) -> int:
    """Density weight band for a per-slice peak HU; 0 below the first band."""
    if peak_hu < WEIGHT_BAND_FLOOR:
        return 0
    if peak_hu < 200:
        return 1
    if peak_hu < 300:
        return 2
    if peak_hu < 400:
        return 3
    return 4


def bin_score(rounded: int) -> CacBin:
    if rounded < 0:
        raise ValueError("rounded score must be >= 0")
    if rounded == 0:
        return CacBin.zero
    if rounded <= 100:
        return CacBin.b1_100
    if rounded <= 400:
        return CacBin.b101_400
    return CacBin.gt400


def threshold_class(rounded: int, threshold: int) -> bool:
    """Dichotomize: score at or above the threshold counts as positive."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return rounded >= threshold


class _Stats(NamedTuple):
    flat: np.ndarray      # candidate voxel indices, ascending
    labels: np.ndarray    # component label per candidate voxel
    lab: np.ndarray       # per (lesion, slice) group: label
    sl: np.ndarray        # ... slice index
    cnt: np.ndarray       # ... voxel count
    peak: np.ndarray      # ... peak HU
    weight: np.ndarray    # ... density weight (0 when below band floor)
    retained: np.ndarray  # bool, survives min-area rule and band floor


def _candidate_stats(volume: CtVolume, mask: CalciumMask,
                     config: ScoringConfig) -> _Stats:
    if mask.dims != volume.dims:
        raise DimsMismatch(
            f"mask dims {mask.dims} != volume dims {volume.dims}")
    flat = mask.flat_indices()
    hu = volume.voxels.reshape(-1)[flat].astype(np.int64)
    keep = hu >= config.hu_threshold
    flat, hu = flat[keep], hu[keep]

    labels = kernels.label_components(flat, volume.dims, config.connectivity)
    plane = volume.n_rows * volume.n_cols
    lab, sl, cnt, peak = kernels.lesion_slice_stats(labels, flat // plane, hu)

    pixel_area = volume.pixel_spacing_mm[0] * volume.pixel_spacing_mm[1]
    weight = np.array([weight_for_peak(int(p)) for p in peak], dtype=np.int64)
    retained = (cnt * pixel_area >= config.min_slice_area_mm2) & (weight > 0)
    return _Stats(flat, labels, lab, sl, cnt, peak, weight, retained)


def _build_lesions(st: _Stats, pixel_area: float, norm: float) -> list[Lesion]:
    lesions = []
    for label in np.unique(st.lab[st.retained]):
        rows = np.flatnonzero((st.lab == label) & st.retained)
        entries = [
            SliceEntry(
                slice_index=int(st.sl[i]),
                area_mm2=float(st.cnt[i] * pixel_area),
                peak_hu=int(st.peak[i]),
                weight=int(st.weight[i]),
                slice_score=float(st.cnt[i] * pixel_area)
                * int(st.weight[i]) * norm,
            )
            for i in rows
        ]
        lesions.append(Lesion(
            lesion_id=len(lesions),
            voxel_indices=st.flat[st.labels == label],
            per_slice=entries,
        ))
    return lesions


def extract_lesions(volume: CtVolume, mask: CalciumMask,
                    config: ScoringConfig | None = None) -> list[Lesion]:
    """Connected components with per-slice scoring entries.

    Lesion ids are assigned in ascending order of each component's minimum
    flattened voxel index, so results are stable across runs and backends.
    """
    config = config or ScoringConfig()
    st = _candidate_stats(volume, mask, config)
    pixel_area = volume.pixel_spacing_mm[0] * volume.pixel_spacing_mm[1]
    norm = (volume.slice_thickness_mm / 3.0
            if config.thickness_normalization == "ratio_3mm" else 1.0)
    return _build_lesions(st, pixel_area, norm)


def score_scan(volume: CtVolume, mask: CalciumMask,
               config: ScoringConfig | None = None) -> ScanScore:
    """Agatston total for one (volume, mask) pair.

    The total is computed as pixel_area * sum(count * weight) over retained
    entries; the integer sum is exact, so the result does not depend on
    summation order and matches any scorer using the same factorization
    bit for bit.
    """
    config = config or ScoringConfig()
    st = _candidate_stats(volume, mask, config)
    pixel_area = volume.pixel_spacing_mm[0] * volume.pixel_spacing_mm[1]
    norm = (volume.slice_thickness_mm / 3.0
            if config.thickness_normalization == "ratio_3mm" else 1.0)

    weighted_count = int(np.sum(st.cnt[st.retained] * st.weight[st.retained]))
    total = pixel_area * weighted_count * norm
    rounded = round_half_up(total)
    lesions = _build_lesions(st, pixel_area, norm)

    return ScanScore(
        study_uid=volume.meta.study_uid,
        series_uid=volume.meta.series_uid,
        total=float(total),
        rounded=rounded,
        bin=bin_score(rounded),
        lesions=lesions,
        config_fingerprint=config.fingerprint(),
    )
