"""Opportunistic coronary-artery-calcium quantification toolkit."""

from .agatston import (
    CacBin,
    Lesion,
    ScanScore,
    ScoringConfig,
    bin_score,
    extract_lesions,
    round_half_up,
    score_scan,
    threshold_class,
)
from .ingest import CtVolume, SelectionPolicy, SeriesMeta, select_series
from .masks import CalciumMask, baseline_segment, load_mask, serialize_mask

__version__ = "0.1.0"

__all__ = [
    "CacBin", "CalciumMask", "CtVolume", "Lesion", "ScanScore",
    "ScoringConfig", "SelectionPolicy", "SeriesMeta", "baseline_segment",
    "bin_score", "extract_lesions", "load_mask", "round_half_up",
    "score_scan", "select_series", "serialize_mask", "threshold_class",
]
