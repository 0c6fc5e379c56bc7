"""Study metadata parsing, series selection, and HU volume loading.

The on-disk interchange layout is one directory per series:

    <series_dir>/manifest      JSON: SeriesMeta fields, geometry, rescale
    <series_dir>/voxels.i16le  int16 little-endian raw values, slice-major

Rescale (HU = raw * slope + intercept) is applied at load time and never
stored, so a fixture survives round-trips bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    InconsistentGeometry,
    MissingMandatoryTag,
    MissingSlices,
    NoEligibleSeries,
    UnreadableSource,
)

HU_MIN = -1024
HU_MAX = 32767

_MANDATORY = ("study_uid", "series_uid", "orientation",
              "slice_thickness_mm", "acquisition_timestamp")


@dataclass
class SeriesMeta:
    """Metadata for one CT series, the unit of selection."""

    study_uid: str
    series_uid: str
    orientation: str              # "axial" or "non_axial"
    slice_thickness_mm: float
    acquisition_timestamp: str    # ISO-8601; lexicographic order == time order
    description: str = ""
    contrast: bool = False
    modality: str = "CT"
    manufacturer: str = ""
    center_id: str = ""
    kvp: float | None = None
    sex: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CtVolume:
    """A loaded HU volume. ``voxels`` is int16 with shape (slice, row, col)."""

    voxels: np.ndarray
    pixel_spacing_mm: tuple[float, float]   # (row_mm, col_mm)
    slice_thickness_mm: float
    slice_spacing_mm: float
    meta: SeriesMeta

    @property
    def n_slices(self) -> int:
        return int(self.voxels.shape[0])

    @property
    def n_rows(self) -> int:
        return int(self.voxels.shape[1])

    @property
    def n_cols(self) -> int:
        return int(self.voxels.shape[2])

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.n_slices, self.n_rows, self.n_cols)


@dataclass
class SelectionPolicy:
    """Filter and preference rules applied by :func:`select_series`."""

    min_thickness_mm: float = 2.5
    max_thickness_mm: float = 5.0
    require_axial: bool = True
    require_non_contrast: bool = True
    # preference tiers, best first; matched case-insensitively as substrings
    keywords: tuple[str, ...] = ("cardiac", "calcium", "lung")

    @classmethod
    def from_file(cls, path: str | Path) -> "SelectionPolicy":
        raw = json.loads(Path(path).read_text("utf-8"))
        if "keywords" in raw:
            raw["keywords"] = tuple(raw["keywords"])
        return cls(**raw)


def _meta_from_dict(raw: dict, fallback_uid: str) -> SeriesMeta:
    uid = str(raw.get("series_uid", fallback_uid))
    for name in _MANDATORY:
        if raw.get(name) in (None, ""):
            raise MissingMandatoryTag(uid, name)
    thickness = float(raw["slice_thickness_mm"])
    if thickness <= 0:
        raise MissingMandatoryTag(uid, "slice_thickness_mm")
    kvp = raw.get("kvp")
    return SeriesMeta(
        study_uid=str(raw["study_uid"]),
        series_uid=uid,
        orientation=str(raw["orientation"]),
        slice_thickness_mm=thickness,
        acquisition_timestamp=str(raw["acquisition_timestamp"]),
        description=str(raw.get("description", "")),
        contrast=bool(raw.get("contrast", False)),
        modality=str(raw.get("modality", "CT")),
        manufacturer=str(raw.get("manufacturer", "")),
        center_id=str(raw.get("center_id", "")),
        kvp=None if kvp is None else float(kvp),
        sex=raw.get("sex"),
    )


def _read_manifest(path: Path) -> dict:
    try:
        raw = json.loads(path.read_text("utf-8"))
    except OSError as exc:
        raise UnreadableSource(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise UnreadableSource(f"malformed manifest {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise UnreadableSource(f"manifest {path} is not an object")
    return raw


def parse_study_manifest(source: str | Path) -> list[SeriesMeta]:
    """Collect SeriesMeta for every series under ``source``.

    ``source`` may be a study directory (one subdirectory per series, each
    holding a ``manifest`` file) or a single manifest file. No filtering
    happens here; ineligible series are still returned.
    """
    src = Path(source)
    if src.is_file():
        return [_meta_from_dict(_read_manifest(src), src.parent.name)]
    if not src.is_dir():
        raise UnreadableSource(f"no such study source: {src}")
    out = []
    for series_dir in sorted(p for p in src.iterdir() if p.is_dir()):
        manifest = series_dir / "manifest"
        if not manifest.is_file():
            raise UnreadableSource(f"series dir {series_dir} has no manifest")
        out.append(_meta_from_dict(_read_manifest(manifest), series_dir.name))
    if not out:
        raise UnreadableSource(f"no series found under {src}")
    return out


def _keyword_rank(description: str, keywords: Sequence[str]) -> int:
    lowered = description.lower()
    for rank, word in enumerate(keywords):
        if word in lowered:
            return rank
    return len(keywords)


def select_series(candidates: Sequence[SeriesMeta],
                  policy: SelectionPolicy | None = None) -> SeriesMeta:
    """Pick the single series to score for one study.

    Filters to axial, non-contrast, thickness within [min, max] (inclusive),
    deduplicates identical descriptions keeping the latest acquisition, then
    prefers keyword-tier matches. Fully deterministic: candidate order never
    affects the result.
    """
    if not candidates:
        raise NoEligibleSeries("<empty>", {})
    policy = policy or SelectionPolicy()
    study_uid = candidates[0].study_uid

    reasons: dict[str, str] = {}
    eligible = []
    for meta in candidates:
        if policy.require_axial and meta.orientation != "axial":
            reasons[meta.series_uid] = "non-axial orientation"
        elif policy.require_non_contrast and meta.contrast:
            reasons[meta.series_uid] = "contrast enhanced"
        elif not (policy.min_thickness_mm <= meta.slice_thickness_mm
                  <= policy.max_thickness_mm):
            reasons[meta.series_uid] = (
                f"slice thickness {meta.slice_thickness_mm:g} mm outside "
                f"[{policy.min_thickness_mm:g}, {policy.max_thickness_mm:g}]")
        else:
            eligible.append(meta)
    if not eligible:
        raise NoEligibleSeries(study_uid, reasons)

    # same protocol (identical description): keep the latest acquisition,
    # breaking timestamp ties toward the smaller series_uid
    by_description: dict[str, SeriesMeta] = {}
    for meta in eligible:
        held = by_description.get(meta.description)
        if held is None or _wins_dedup(meta, held):
            by_description[meta.description] = meta

    survivors = list(by_description.values())
    survivors.sort(key=lambda m: (_keyword_rank(m.description, policy.keywords),
                                  m.series_uid))
    return survivors[0]


def _wins_dedup(challenger: SeriesMeta, held: SeriesMeta) -> bool:
    if challenger.acquisition_timestamp != held.acquisition_timestamp:
        return challenger.acquisition_timestamp > held.acquisition_timestamp
    return challenger.series_uid < held.series_uid


def rescale_to_hu(raw: np.ndarray, slope: float, intercept: float) -> np.ndarray:
    hu = raw.astype(np.float64) * slope + intercept
    return np.clip(np.rint(hu), HU_MIN, HU_MAX).astype(np.int16)


def assemble_volume(meta: SeriesMeta,
                    raw_slices: Sequence[np.ndarray],
                    positions_mm: Sequence[float],
                    pixel_spacing_mm: tuple[float, float],
                    slope: float = 1.0,
                    intercept: float = 0.0,
                    slice_spacing_mm: float | None = None) -> CtVolume:
    """Order raw slices by position, rescale to HU, and validate geometry."""
    if len(raw_slices) != len(positions_mm):
        raise InconsistentGeometry(
            f"{len(raw_slices)} slices but {len(positions_mm)} positions")
    if not raw_slices:
        raise InconsistentGeometry("series has no slices")
    shape0 = raw_slices[0].shape
    for arr in raw_slices:
        if arr.ndim != 2 or arr.shape != shape0:
            raise InconsistentGeometry(
                f"slice shape {arr.shape} != {shape0}")
    order = sorted(range(len(positions_mm)),
                   key=lambda i: (positions_mm[i], i))
    positions = [float(positions_mm[i]) for i in order]

    if slice_spacing_mm is None:
        if len(positions) > 1:
            diffs = np.diff(positions)
            slice_spacing_mm = float(np.median(diffs))
        else:
            slice_spacing_mm = meta.slice_thickness_mm
    if slice_spacing_mm <= 0:
        raise InconsistentGeometry(
            f"nonpositive slice spacing {slice_spacing_mm:g}")
    if len(positions) > 1:
        gaps = np.diff(positions)
        limit = 1.5 * slice_spacing_mm
        if np.any(gaps > limit):
            worst = float(gaps.max())
            raise MissingSlices(
                f"slice position gap {worst:g} mm exceeds "
                f"1.5 x spacing ({limit:g} mm)")

    raw = np.stack([raw_slices[i] for i in order])
    return CtVolume(
        voxels=rescale_to_hu(raw, slope, intercept),
        pixel_spacing_mm=(float(pixel_spacing_mm[0]), float(pixel_spacing_mm[1])),
        slice_thickness_mm=float(meta.slice_thickness_mm),
        slice_spacing_mm=float(slice_spacing_mm),
        meta=meta,
    )


def load_volume(series: SeriesMeta, pixel_source: str | Path) -> CtVolume:
    """Load the fixture directory ``pixel_source`` for ``series``."""
    src = Path(pixel_source)
    manifest = _read_manifest(src / "manifest")
    n_slices = int(manifest["n_slices"])
    n_rows = int(manifest["n_rows"])
    n_cols = int(manifest["n_cols"])
    expected = n_slices * n_rows * n_cols

    raw = np.fromfile(src / "voxels.i16le", dtype="<i2")
    if raw.size != expected:
        raise InconsistentGeometry(
            f"{src}: voxel file holds {raw.size} values, "
            f"manifest implies {expected}")
    raw = raw.reshape(n_slices, n_rows, n_cols)

    spacing = manifest.get("slice_spacing_mm")
    positions = manifest.get("slice_positions_mm")
    if positions is None:
        step = float(spacing) if spacing else float(series.slice_thickness_mm)
        positions = [i * step for i in range(n_slices)]
    return assemble_volume(
        series,
        [raw[i] for i in range(n_slices)],
        positions,
        tuple(manifest["pixel_spacing_mm"]),
        slope=float(manifest.get("rescale_slope", 1.0)),
        intercept=float(manifest.get("rescale_intercept", 0.0)),
        slice_spacing_mm=None if spacing is None else float(spacing),
    )


def read_series_fixture(series_dir: str | Path) -> CtVolume:
    """Parse a series fixture directory and load its volume in one call."""
    src = Path(series_dir)
    meta = _meta_from_dict(_read_manifest(src / "manifest"), src.name)
    return load_volume(meta, src)


def write_series_fixture(series_dir: str | Path, volume: CtVolume) -> Path:
    """Serialize a loaded volume back to the interchange layout.

    Written with slope 1 / intercept 0 so raw values equal HU; loading the
    result reproduces ``volume.voxels`` exactly.
    """
    out = Path(series_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = volume.meta.to_dict()
    manifest.update({
        "n_slices": volume.n_slices,
        "n_rows": volume.n_rows,
        "n_cols": volume.n_cols,
        "pixel_spacing_mm": list(volume.pixel_spacing_mm),
        "slice_spacing_mm": volume.slice_spacing_mm,
        "rescale_slope": 1.0,
        "rescale_intercept": 0.0,
    })
    (out / "manifest").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", "utf-8")
    volume.voxels.astype("<i2").tofile(out / "voxels.i16le")
    return out
