from __future__ import annotations

import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cackit.errors import (
    DimsMismatch,
    InvalidModelOutput,
    MalformedRuns,
    RoiOutOfBounds,
    RunnerFailed,
    UidMismatch,
)
from cackit.masks import (
    CalciumMask,
    ExternalRunnerConfig,
    baseline_segment,
    canonicalize_runs,
    full_roi,
    load_mask,
    parse_mask,
    run_external_model,
    serialize_mask,
)

from conftest import dense_mask, make_volume


class TestCanonicalizeRuns:
    def test_sorts_and_merges_adjacent(self):
        assert canonicalize_runs([(10, 2), (0, 3), (3, 4)], 20) == \
            [(0, 7), (10, 2)]

    def test_overlap_rejected(self):
        with pytest.raises(MalformedRuns):
            canonicalize_runs([(0, 3), (2, 2)], 10)

    def test_nonpositive_length_rejected(self):
        with pytest.raises(MalformedRuns):
            canonicalize_runs([(0, 0)], 10)

    def test_out_of_range_rejected(self):
        with pytest.raises(MalformedRuns):
            canonicalize_runs([(8, 3)], 10)
        with pytest.raises(MalformedRuns):
            canonicalize_runs([(-1, 2)], 10)

    @given(st.lists(st.integers(0, 99), unique=True, max_size=40))
    def test_runs_from_indices_cover_exactly(self, indices):
        mask = CalciumMask.from_indices("s", "a", (4, 5, 5),
                                        np.array(indices, dtype=np.int64))
        assert sorted(mask.flat_indices().tolist()) == sorted(indices)
        assert mask.voxel_count == len(indices)
        # canonical: sorted starts, no adjacency left to merge
        for (s1, l1), (s2, _) in zip(mask.runs, mask.runs[1:]):
            assert s1 + l1 < s2


class TestSerializeParse:
    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(12)
        dense = rng.random((3, 4, 5)) < 0.3
        vol = make_volume(np.zeros((3, 4, 5), dtype=np.int16))
        mask = dense_mask(vol, dense)
        text = serialize_mask(mask)
        back = parse_mask(text)
        assert back == mask
        assert serialize_mask(back) == text

    def test_header_content(self):
        mask = CalciumMask("study9", "ser2", (2, 3, 4), [(5, 2)])
        text = serialize_mask(mask)
        assert text.splitlines()[0] == "CACMASK 1 study9 ser2 2 3 4"

    @pytest.mark.parametrize("bad", [
        "",
        "WRONG 1 s a 2 2 2\n",
        "CACMASK 2 s a 2 2 2\n",            # unsupported version
        "CACMASK 1 s a 2 2\n",              # short header
        "CACMASK 1 s a 2 2 0\n",            # zero dim
        "CACMASK 1 s a 2 2 2\n1\n",         # run line with one field
        "CACMASK 1 s a 2 2 2\nx y\n",       # non-integer run
        "CACMASK 1 s a 2 2 2\n0 3\n2 1\n",  # overlapping runs
    ])
    def test_malformed_text(self, bad):
        with pytest.raises(MalformedRuns):
            parse_mask(bad)

    def test_parse_normalizes_to_canonical(self):
        text = "CACMASK 1 s a 2 2 2\n4 2\n0 2\n2 2\n"
        mask = parse_mask(text)
        assert mask.runs == [(0, 6)]


class TestLoadMask:
    def test_dims_checked_against_volume(self, tmp_path):
        vol = make_volume(np.zeros((2, 2, 2), dtype=np.int16))
        path = tmp_path / "m.cacmask"
        path.write_text("CACMASK 1 S1 A 3 2 2\n0 1\n", "utf-8")
        with pytest.raises(DimsMismatch):
            load_mask(path, vol)

    def test_uid_checked_against_volume(self, tmp_path):
        vol = make_volume(np.zeros((2, 2, 2), dtype=np.int16))
        path = tmp_path / "m.cacmask"
        path.write_text("CACMASK 1 OTHER A 2 2 2\n0 1\n", "utf-8")
        with pytest.raises(UidMismatch):
            load_mask(path, vol)


class TestPositiveSlices:
    def test_spanning_run(self):
        # one run crossing a slice boundary lights up both slices
        mask = CalciumMask("s", "a", (3, 2, 2), [(3, 2)])
        assert mask.positive_slices() == [0, 1]

    def test_empty(self):
        mask = CalciumMask("s", "a", (3, 2, 2), [])
        assert mask.positive_slices() == []


class TestBaselineSegment:
    def test_threshold_at_130_inclusive(self):
        hu = np.full((1, 2, 2), -1000, dtype=np.int16)
        hu[0, 0, 0] = 130
        hu[0, 0, 1] = 129
        vol = make_volume(hu)
        mask = baseline_segment(vol, full_roi(vol))
        assert mask.flat_indices().tolist() == [0]

    def test_roi_restricts(self):
        hu = np.full((2, 2, 2), 200, dtype=np.int16)
        vol = make_volume(hu)
        mask = baseline_segment(vol, (0, 0, 0, 1, 2, 2))
        assert mask.voxel_count == 4
        assert mask.positive_slices() == [0]

    def test_roi_out_of_bounds(self):
        vol = make_volume(np.zeros((2, 2, 2), dtype=np.int16))
        with pytest.raises(RoiOutOfBounds):
            baseline_segment(vol, (0, 0, 0, 3, 2, 2))
        with pytest.raises(RoiOutOfBounds):
            baseline_segment(vol, (1, 0, 0, 0, 2, 2))

    @given(st.integers(131, 500))
    def test_raising_threshold_shrinks_mask(self, threshold):
        rng = np.random.default_rng(9)
        hu = rng.integers(-1000, 600, size=(3, 5, 5)).astype(np.int16)
        vol = make_volume(hu)
        base = set(baseline_segment(vol, full_roi(vol)).flat_indices())
        higher = set(baseline_segment(vol, full_roi(vol),
                                      hu_threshold=threshold).flat_indices())
        assert higher <= base


ECHO_RUNNER = """\
import pathlib, sys
in_dir, out_path = sys.argv[1], sys.argv[2]
import json
import numpy as np
manifest = json.loads((pathlib.Path(in_dir) / "manifest").read_text())
raw = np.fromfile(pathlib.Path(in_dir) / "voxels.i16le", dtype="<i2")
idx = np.flatnonzero(raw >= 130)
lines = [f"CACMASK 1 {manifest['study_uid']} {manifest['series_uid']} "
         f"{manifest['n_slices']} {manifest['n_rows']} {manifest['n_cols']}"]
start = None
prev = None
for i in idx:
    if start is None:
        start = prev = int(i)
        continue
    if i == prev + 1:
        prev = int(i)
        continue
    lines.append(f"{start} {prev - start + 1}")
    start = prev = int(i)
if start is not None:
    lines.append(f"{start} {prev - start + 1}")
pathlib.Path(out_path).write_text("\\n".join(lines) + "\\n")
"""


def _volume_with_calcium():
    hu = np.full((2, 3, 3), -1000, dtype=np.int16)
    hu[0, 1, 1] = 300
    hu[1, 0, 0] = 150
    return make_volume(hu)


class TestExternalRunner:
    def test_command_runner_round_trip(self, tmp_path):
        script = tmp_path / "runner.py"
        script.write_text(ECHO_RUNNER, "utf-8")
        vol = _volume_with_calcium()
        runner = ExternalRunnerConfig(
            command=[sys.executable, str(script), "{input}", "{output}"])
        mask = run_external_model(vol, runner)
        expected = np.flatnonzero(vol.voxels.reshape(-1) >= 130).tolist()
        assert mask.flat_indices().tolist() == expected

    def test_command_without_placeholders_gets_paths_appended(self, tmp_path):
        script = tmp_path / "runner.py"
        script.write_text(ECHO_RUNNER, "utf-8")
        vol = _volume_with_calcium()
        runner = ExternalRunnerConfig(command=[sys.executable, str(script)])
        mask = run_external_model(vol, runner)
        assert mask.voxel_count == 2

    def test_nonzero_exit_reports_stderr(self, tmp_path):
        script = tmp_path / "runner.py"
        script.write_text("import sys; print('boom', file=sys.stderr); "
                          "sys.exit(3)", "utf-8")
        runner = ExternalRunnerConfig(command=[sys.executable, str(script)])
        with pytest.raises(RunnerFailed) as err:
            run_external_model(_volume_with_calcium(), runner)
        assert "3" in str(err.value)
        assert "boom" in err.value.diagnostics

    def test_missing_output_is_invalid(self, tmp_path):
        script = tmp_path / "runner.py"
        script.write_text("pass", "utf-8")
        runner = ExternalRunnerConfig(command=[sys.executable, str(script)])
        with pytest.raises(InvalidModelOutput):
            run_external_model(_volume_with_calcium(), runner)

    def test_wrong_dims_is_invalid(self, tmp_path):
        script = tmp_path / "runner.py"
        script.write_text(
            "import sys, pathlib\n"
            "pathlib.Path(sys.argv[2]).write_text("
            "'CACMASK 1 S1 A 9 9 9\\n0 1\\n')\n", "utf-8")
        runner = ExternalRunnerConfig(command=[sys.executable, str(script)])
        with pytest.raises(InvalidModelOutput):
            run_external_model(_volume_with_calcium(), runner)

    def test_unlaunchable_command(self):
        runner = ExternalRunnerConfig(command=["/no/such/binary"])
        with pytest.raises(RunnerFailed):
            run_external_model(_volume_with_calcium(), runner)

    def test_exactly_one_transport_required(self):
        with pytest.raises(RunnerFailed):
            run_external_model(_volume_with_calcium(),
                               ExternalRunnerConfig())
        with pytest.raises(RunnerFailed):
            run_external_model(
                _volume_with_calcium(),
                ExternalRunnerConfig(command=["x"], endpoint="http://x"))

    def test_endpoint_mode(self):
        import httpx

        vol = _volume_with_calcium()
        expected = np.flatnonzero(vol.voxels.reshape(-1) >= 130)
        body = ("CACMASK 1 S1 A 2 3 3\n"
                + "\n".join(f"{i} 1" for i in expected) + "\n")
        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen["content-type"] = request.headers["content-type"]
            seen["body"] = request.read()
            return httpx.Response(200, content=body.encode())

        client = httpx.Client(transport=httpx.MockTransport(handler))
        runner = ExternalRunnerConfig(endpoint="http://model.local/segment")
        mask = run_external_model(vol, runner, client=client)
        assert mask.flat_indices().tolist() == expected.tolist()
        assert seen["content-type"].startswith("multipart/form-data")
        assert b'name="manifest"' in seen["body"]
        assert b'name="voxels"' in seen["body"]

    def test_endpoint_error_status(self):
        import httpx

        client = httpx.Client(transport=httpx.MockTransport(
            lambda request: httpx.Response(500, text="kaput")))
        runner = ExternalRunnerConfig(endpoint="http://model.local/segment")
        with pytest.raises(RunnerFailed) as err:
            run_external_model(_volume_with_calcium(), runner, client=client)
        assert "500" in str(err.value)
