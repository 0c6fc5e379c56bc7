"""Optional DICOM reader mapping Part-10 series onto the fixture model.

This adapter only consumes the handful of tags the selection policy and
loader need; everything else in the files is ignored. It requires the
``dicom`` extra (pydicom) and raises a clear error without it.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import MissingMandatoryTag, UnreadableSource
from .ingest import CtVolume, SeriesMeta, assemble_volume


def _require_pydicom():
    try:
        import pydicom
    except ImportError as exc:
        raise UnreadableSource(
            "reading DICOM needs pydicom; install the 'dicom' extra"
        ) from exc
    return pydicom


def _is_axial(ds) -> bool:
    iop = getattr(ds, "ImageOrientationPatient", None)
    if iop is None:
        return False
    # axial when the slice normal is along the patient z axis
    row = np.array(iop[:3], dtype=float)
    col = np.array(iop[3:], dtype=float)
    normal = np.cross(row, col)
    return bool(abs(normal[2]) > 0.99)


def meta_from_dataset(ds) -> SeriesMeta:
    series_uid = str(getattr(ds, "SeriesInstanceUID", "<unknown>"))
    thickness = getattr(ds, "SliceThickness", None)
    timestamp = (getattr(ds, "AcquisitionDateTime", None)
                 or getattr(ds, "SeriesDate", None))
    if thickness is None:
        raise MissingMandatoryTag(series_uid, "slice_thickness_mm")
    if timestamp is None:
        raise MissingMandatoryTag(series_uid, "acquisition_timestamp")
    kvp = getattr(ds, "KVP", None)
    return SeriesMeta(
        study_uid=str(getattr(ds, "StudyInstanceUID", "<unknown>")),
        series_uid=series_uid,
        orientation="axial" if _is_axial(ds) else "non_axial",
        slice_thickness_mm=float(thickness),
        acquisition_timestamp=str(timestamp),
        description=str(getattr(ds, "SeriesDescription", "")),
        contrast=bool(str(getattr(ds, "ContrastBolusAgent", "")).strip()),
        modality=str(getattr(ds, "Modality", "CT")),
        manufacturer=str(getattr(ds, "Manufacturer", "")),
        center_id=str(getattr(ds, "InstitutionName", "")),
        kvp=None if kvp is None else float(kvp),
        sex=str(getattr(ds, "PatientSex", "")) or None,
    )


def load_dicom_series(series_dir: str | Path) -> CtVolume:
    """Read every DICOM file in a directory as one axial series."""
    pydicom = _require_pydicom()
    files = sorted(Path(series_dir).glob("*.dcm")) or \
        sorted(p for p in Path(series_dir).iterdir() if p.is_file())
    if not files:
        raise UnreadableSource(f"no DICOM files under {series_dir}")

    datasets = [pydicom.dcmread(str(f)) for f in files]
    meta = meta_from_dataset(datasets[0])
    positions = [float(getattr(ds, "ImagePositionPatient", [0, 0, i])[2])
                 for i, ds in enumerate(datasets)]
    spacing = getattr(datasets[0], "PixelSpacing", None)
    if spacing is None:
        raise MissingMandatoryTag(meta.series_uid, "pixel_spacing_mm")
    slope = float(getattr(datasets[0], "RescaleSlope", 1.0))
    intercept = float(getattr(datasets[0], "RescaleIntercept", 0.0))
    return assemble_volume(
        meta,
        [ds.pixel_array for ds in datasets],
        positions,
        (float(spacing[0]), float(spacing[1])),
        slope=slope,
        intercept=intercept,
    )
