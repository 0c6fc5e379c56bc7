from __future__ import annotations

import json
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from cackit.ingest import CtVolume, SeriesMeta, write_series_fixture
from cackit.masks import CalciumMask, serialize_mask
from cackit.store import ScoreStore

# first hypothesis example may hit numba compilation; do not time it
settings.register_profile("cackit", deadline=None)
settings.load_profile("cackit")


def make_meta(**overrides) -> SeriesMeta:
    fields = dict(
        study_uid="S1",
        series_uid="A",
        orientation="axial",
        slice_thickness_mm=3.0,
        acquisition_timestamp="2015-06-01T08:00:00",
        description="CALCIUM SCORE 3.0",
        manufacturer="Toshiba",
        center_id="C01",
        kvp=120.0,
        sex="M",
    )
    fields.update(overrides)
    return SeriesMeta(**fields)


def make_volume(hu: np.ndarray,
                pixel_spacing=(1.0, 1.0),
                thickness: float = 3.0,
                spacing: float | None = None,
                **meta_overrides) -> CtVolume:
    meta = make_meta(slice_thickness_mm=thickness, **meta_overrides)
    return CtVolume(
        voxels=np.asarray(hu, dtype=np.int16),
        pixel_spacing_mm=(float(pixel_spacing[0]), float(pixel_spacing[1])),
        slice_thickness_mm=float(thickness),
        slice_spacing_mm=float(spacing if spacing is not None else thickness),
        meta=meta,
    )


def dense_mask(volume: CtVolume, dense: np.ndarray) -> CalciumMask:
    return CalciumMask.from_dense(volume.meta.study_uid,
                                  volume.meta.series_uid,
                                  np.asarray(dense, dtype=bool))


def random_volume_and_mask(rng: np.random.Generator,
                           max_side: int = 32) -> tuple[CtVolume, CalciumMask]:
    """A small volume with calcified blobs and a mask covering part of it."""
    dims = tuple(int(rng.integers(3, max_side + 1)) for _ in range(3))
    hu = np.full(dims, -1000, dtype=np.int16)
    n_blobs = int(rng.integers(1, 6))
    for _ in range(n_blobs):
        z0 = int(rng.integers(0, dims[0]))
        y0 = int(rng.integers(0, dims[1]))
        x0 = int(rng.integers(0, dims[2]))
        dz = int(rng.integers(1, 4))
        dy = int(rng.integers(1, 5))
        dx = int(rng.integers(1, 5))
        block = rng.integers(60, 700, size=(dz, dy, dx))
        hu[z0:z0 + dz, y0:y0 + dy, x0:x0 + dx] = \
            block[:dims[0] - z0, :dims[1] - y0, :dims[2] - x0]
    dense = rng.random(dims) < 0.6
    spacing = (float(rng.uniform(0.4, 1.0)), float(rng.uniform(0.4, 1.0)))
    thickness = float(rng.uniform(2.5, 5.0))
    uid = f"S{int(rng.integers(0, 10**6)):06d}"
    volume = make_volume(hu, pixel_spacing=spacing, thickness=thickness,
                         study_uid=uid, series_uid=uid + ".1")
    return volume, dense_mask(volume, dense)


@pytest.fixture
def store(tmp_path) -> ScoreStore:
    return ScoreStore(tmp_path / "store", root_seed=77)


# --- on-disk fixture builders used by pipeline and CLI tests -----------------

def write_series_dir(study_dir: Path, volume: CtVolume) -> Path:
    return write_series_fixture(study_dir / volume.meta.series_uid, volume)


def write_mask_file(masks_dir: Path, mask: CalciumMask) -> Path:
    masks_dir.mkdir(parents=True, exist_ok=True)
    path = masks_dir / f"{mask.study_uid}.cacmask"
    path.write_text(serialize_mask(mask), "utf-8")
    return path


def simple_study(input_root: Path, study_uid: str, peak_hu: int = 250,
                 n_vox: int = 4, center_id: str = "C01",
                 manufacturer: str = "Toshiba", kvp: float = 120.0,
                 sex: str = "M") -> CtVolume:
    """One-series study: a 2x2 (or larger) calcified patch on slice 1."""
    hu = np.full((3, 8, 8), -1000, dtype=np.int16)
    placed = 0
    for y in range(2, 6):
        for x in range(2, 6):
            if placed >= n_vox:
                break
            hu[1, y, x] = peak_hu
            placed += 1
    volume = make_volume(hu, study_uid=study_uid,
                         series_uid=f"{study_uid}.1",
                         center_id=center_id, manufacturer=manufacturer,
                         kvp=kvp, sex=sex)
    write_series_dir(input_root / study_uid, volume)
    return volume


def seed_scored_study(store: ScoreStore, study_uid: str, rounded: int,
                      n_slices: int = 1) -> dict:
    """Store-resident study whose score rounds to exactly ``rounded``.

    Voxels sit at 150 HU (weight 1) on 1 mm pixels, so the total equals the
    voxel count. ``rounded`` must fit one 25x25 slice.
    """
    from cackit.agatston import ScoringConfig, score_scan

    assert 0 < rounded <= 625
    hu = np.full((n_slices, 25, 25), -1000, dtype=np.int16)
    hu[n_slices // 2].reshape(-1)[:rounded] = 150
    volume = make_volume(hu, study_uid=study_uid,
                         series_uid=f"{study_uid}.1")
    mask = dense_mask(volume, hu >= 130)
    write_series_fixture(store.volume_dir(study_uid), volume)
    store.mask_path(study_uid).write_text(serialize_mask(mask), "utf-8")
    record = score_scan(volume, mask, ScoringConfig()).to_record()
    store.append("scores", record)
    assert record["rounded"] == rounded
    return record


def write_jsonl(path: Path, rows: list[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return path


def days_after(start: date, n: int) -> str:
    return (start + timedelta(days=n)).isoformat()
