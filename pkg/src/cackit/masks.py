"""Calcium mask interchange and the segmentation-model boundary.

Masks travel as run-length encodings over the flattened slice-major voxel
index, one ``start length`` pair per line under a fixed header:

    CACMASK 1 <study_uid> <series_uid> <n_slices> <n_rows> <n_cols>

Canonical form is sorted, non-overlapping, with adjacent runs merged, so
serialize/load round-trips are bit exact.
"""

from __future__ import annotations

import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DimsMismatch,
    InvalidModelOutput,
    MalformedRuns,
    RoiOutOfBounds,
    RunnerFailed,
    UidMismatch,
)
from .ingest import CtVolume, write_series_fixture

MASK_MAGIC = "CACMASK"
MASK_VERSION = 1


def canonicalize_runs(runs: Sequence[tuple[int, int]],
                      n_voxels: int) -> list[tuple[int, int]]:
    """Sort, merge adjacency, and validate runs against the voxel count."""
    cleaned = []
    for start, length in runs:
        start, length = int(start), int(length)
        if length <= 0:
            raise MalformedRuns(f"non-positive run length {length} at {start}")
        if start < 0 or start + length > n_voxels:
            raise MalformedRuns(
                f"run ({start}, {length}) outside [0, {n_voxels})")
        cleaned.append((start, length))
    cleaned.sort()
    merged: list[list[int]] = []
    for start, length in cleaned:
        if merged and start < merged[-1][0] + merged[-1][1]:
            raise MalformedRuns(
                f"run starting at {start} overlaps previous run")
        if merged and start == merged[-1][0] + merged[-1][1]:
            merged[-1][1] += length
        else:
            merged.append([start, length])
    return [(s, l) for s, l in merged]


@dataclass
class CalciumMask:
    study_uid: str
    series_uid: str
    dims: tuple[int, int, int]
    runs: list[tuple[int, int]]

    @property
    def n_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def voxel_count(self) -> int:
        return sum(length for _, length in self.runs)

    def flat_indices(self) -> np.ndarray:
        """All set voxel indices, ascending int64."""
        if not self.runs:
            return np.zeros(0, dtype=np.int64)
        parts = [np.arange(s, s + l, dtype=np.int64) for s, l in self.runs]
        return np.concatenate(parts)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.n_voxels, dtype=bool)
        for start, length in self.runs:
            dense[start:start + length] = True
        return dense.reshape(self.dims)

    def positive_slices(self) -> list[int]:
        """Slice indices containing at least one mask voxel."""
        plane = self.dims[1] * self.dims[2]
        hit = set()
        for start, length in self.runs:
            hit.update(range(start // plane, (start + length - 1) // plane + 1))
        return sorted(hit)

    @classmethod
    def from_indices(cls, study_uid: str, series_uid: str,
                     dims: tuple[int, int, int],
                     indices: np.ndarray) -> "CalciumMask":
        idx = np.unique(np.asarray(indices, dtype=np.int64))
        runs = []
        if idx.size:
            breaks = np.flatnonzero(np.diff(idx) != 1)
            starts = np.concatenate(([0], breaks + 1))
            ends = np.concatenate((breaks, [idx.size - 1]))
            runs = [(int(idx[a]), int(idx[b] - idx[a] + 1))
                    for a, b in zip(starts, ends)]
        n = dims[0] * dims[1] * dims[2]
        return cls(study_uid, series_uid, tuple(dims),
                   canonicalize_runs(runs, n))

    @classmethod
    def from_dense(cls, study_uid: str, series_uid: str,
                   dense: np.ndarray) -> "CalciumMask":
        return cls.from_indices(study_uid, series_uid, dense.shape,
                                np.flatnonzero(dense.reshape(-1)))


def serialize_mask(mask: CalciumMask) -> str:
    ns, nr, nc = mask.dims
    lines = [f"{MASK_MAGIC} {MASK_VERSION} {mask.study_uid} "
             f"{mask.series_uid} {ns} {nr} {nc}"]
    lines.extend(f"{start} {length}" for start, length in mask.runs)
    return "\n".join(lines) + "\n"


def parse_mask(text: str) -> CalciumMask:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise MalformedRuns("empty mask file")
    head = lines[0].split()
    if len(head) != 7 or head[0] != MASK_MAGIC:
        raise MalformedRuns(f"bad mask header: {lines[0]!r}")
    if head[1] != str(MASK_VERSION):
        raise MalformedRuns(f"unsupported mask version {head[1]!r}")
    try:
        dims = (int(head[4]), int(head[5]), int(head[6]))
    except ValueError as exc:
        raise MalformedRuns(f"bad dims in header: {lines[0]!r}") from exc
    if min(dims) <= 0:
        raise MalformedRuns(f"non-positive dims {dims}")
    runs = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != 2:
            raise MalformedRuns(f"bad run line: {ln!r}")
        try:
            runs.append((int(parts[0]), int(parts[1])))
        except ValueError as exc:
            raise MalformedRuns(f"bad run line: {ln!r}") from exc
    n = dims[0] * dims[1] * dims[2]
    return CalciumMask(head[2], head[3], dims, canonicalize_runs(runs, n))


def load_mask(source: str | Path, volume: CtVolume) -> CalciumMask:
    """Parse ``source`` and validate it against ``volume``."""
    text = Path(source).read_text("utf-8")
    mask = parse_mask(text)
    if mask.dims != volume.dims:
        raise DimsMismatch(
            f"mask dims {mask.dims} != volume dims {volume.dims}")
    if (mask.study_uid != volume.meta.study_uid
            or mask.series_uid != volume.meta.series_uid):
        raise UidMismatch(
            f"mask is for {mask.study_uid}/{mask.series_uid}, volume is "
            f"{volume.meta.study_uid}/{volume.meta.series_uid}")
    return mask


def baseline_segment(volume: CtVolume,
                     roi: tuple[int, int, int, int, int, int],
                     hu_threshold: int = 130) -> CalciumMask:
    """Threshold segmenter for tests: voxels in ``roi`` with HU >= threshold.

    ``roi`` is (z0, y0, x0, z1, y1, x1), half-open on the upper bounds.
    """
    z0, y0, x0, z1, y1, x1 = (int(v) for v in roi)
    ns, nr, nc = volume.dims
    if not (0 <= z0 <= z1 <= ns and 0 <= y0 <= y1 <= nr
            and 0 <= x0 <= x1 <= nc):
        raise RoiOutOfBounds(f"roi {roi} outside volume dims {volume.dims}")
    dense = np.zeros(volume.dims, dtype=bool)
    dense[z0:z1, y0:y1, x0:x1] = \
        volume.voxels[z0:z1, y0:y1, x0:x1] >= hu_threshold
    return CalciumMask.from_dense(volume.meta.study_uid,
                                  volume.meta.series_uid, dense)


def full_roi(volume: CtVolume) -> tuple[int, int, int, int, int, int]:
    ns, nr, nc = volume.dims
    return (0, 0, 0, ns, nr, nc)


@dataclass
class ExternalRunnerConfig:
    """How to invoke the segmentation model.

    Exactly one of ``command`` and ``endpoint`` must be set. ``command`` is
    an argv list; occurrences of ``{input}`` and ``{output}`` are replaced
    by the staged series directory and the expected mask path (without
    placeholders the two paths are appended as final arguments).
    ``endpoint`` is an HTTP URL that receives the staged fixture as a
    multipart POST (parts ``manifest`` and ``voxels``) and must answer with
    the mask file as its body.
    """

    command: list[str] | None = None
    endpoint: str | None = None
    timeout_s: float = 600.0


def _invoke_command(runner: ExternalRunnerConfig, in_dir: Path,
                    out_path: Path) -> None:
    argv = [arg.replace("{input}", str(in_dir))
               .replace("{output}", str(out_path))
            for arg in runner.command]
    if not any("{input}" in arg or "{output}" in arg
               for arg in runner.command):
        argv = argv + [str(in_dir), str(out_path)]
    try:
        proc = subprocess.run(argv, capture_output=True, text=True,
                              timeout=runner.timeout_s)
    except OSError as exc:
        raise RunnerFailed(f"cannot launch runner {argv[0]!r}",
                           str(exc)) from exc
    except subprocess.TimeoutExpired as exc:
        stderr = exc.stderr or ""
        if isinstance(stderr, bytes):
            stderr = stderr.decode("utf-8", "replace")
        raise RunnerFailed(f"runner timed out after {runner.timeout_s:g}s",
                           stderr) from exc
    if proc.returncode != 0:
        raise RunnerFailed(f"runner exited {proc.returncode}",
                           proc.stderr.strip())


def _invoke_endpoint(runner: ExternalRunnerConfig, in_dir: Path,
                     out_path: Path, client=None) -> None:
    import httpx

    files = {
        "manifest": ("manifest", (in_dir / "manifest").read_bytes(),
                     "application/json"),
        "voxels": ("voxels.i16le", (in_dir / "voxels.i16le").read_bytes(),
                   "application/octet-stream"),
    }
    try:
        if client is None:
            response = httpx.post(runner.endpoint, files=files,
                                  timeout=runner.timeout_s)
        else:
            response = client.post(runner.endpoint, files=files,
                                   timeout=runner.timeout_s)
    except httpx.HTTPError as exc:
        raise RunnerFailed(f"endpoint {runner.endpoint} unreachable",
                           str(exc)) from exc
    if response.status_code != 200:
        raise RunnerFailed(f"endpoint returned {response.status_code}",
                           response.text[:2000])
    out_path.write_bytes(response.content)


def run_external_model(volume: CtVolume, runner: ExternalRunnerConfig,
                       client=None) -> CalciumMask:
    """Stage the volume, invoke the external segmenter, validate its mask.

    ``client`` lets tests substitute an httpx-compatible client for the
    endpoint transport; production callers leave it unset.
    """
    if bool(runner.command) == bool(runner.endpoint):
        raise RunnerFailed("runner needs exactly one of command or endpoint")
    with tempfile.TemporaryDirectory(prefix="cackit-runner-") as scratch:
        in_dir = Path(scratch) / "series"
        out_path = Path(scratch) / "mask.cacmask"
        write_series_fixture(in_dir, volume)
        if runner.command:
            _invoke_command(runner, in_dir, out_path)
        else:
            _invoke_endpoint(runner, in_dir, out_path, client)
        if not out_path.is_file():
            raise InvalidModelOutput("runner produced no mask file")
        try:
            return load_mask(out_path, volume)
        except (MalformedRuns, DimsMismatch, UidMismatch) as exc:
            raise InvalidModelOutput(str(exc)) from exc
