"""End-to-end pipeline composition and stage-level profiling."""

import numpy as np
import numpy.testing as npt
import pytest

from wdpipe.data import synth_generate
from wdpipe.ensemble import default_architectures, detect, init_ensemble
from wdpipe.pipeline import STAGES, StageTimings, profile, run_pipeline


def build_ensemble(n=2, input_size=16, seed=0):
    return init_ensemble(
        default_architectures(n, input_size=input_size), input_size=input_size, seed=seed
    )


def frames(n=3, canvas=16, seed=0):
    return [s.image for s in synth_generate(n, [1 / 3, 1 / 3, 1 / 3], canvas=canvas, seed=seed)]


class TestRunPipeline:
    def test_detection_equals_detect_bitwise(self):
        ensemble = build_ensemble()
        for frame in frames(4):
            from_pipeline, _ = run_pipeline(ensemble, frame)
            direct = detect(ensemble, frame)
            assert from_pipeline == direct

    def test_shares_sum_to_one(self):
        ensemble = build_ensemble()
        _, timings = run_pipeline(ensemble, frames(1)[0])
        assert abs(timings.shares.sum() - 1.0) <= 1e-9

    def test_stage_seconds_positive_on_real_frame(self):
        ensemble = build_ensemble()
        _, timings = run_pipeline(ensemble, frames(1)[0])
        assert timings.normalization_s > 0
        assert timings.scaling_s > 0
        assert timings.detection_s > 0


class TestStageTimings:
    def test_negative_duration_rejected(self):
        with pytest.raises(ValueError):
            StageTimings(normalization_s=-1.0, scaling_s=0.1, detection_s=0.1)

    def test_share_values(self):
        timings = StageTimings(normalization_s=1.0, scaling_s=1.0, detection_s=2.0)
        npt.assert_allclose(timings.shares, [0.25, 0.25, 0.5], atol=1e-12)


class TestProfile:
    def test_single_frame_single_rep_matches_run(self):
        ensemble = build_ensemble()
        report = profile(ensemble, frames(1), repetitions=1)
        assert report.samples.shape == (3, 1)
        npt.assert_allclose(report.mean_s, report.samples[:, 0], atol=1e-15)
        npt.assert_allclose(report.std_s, 0.0, atol=1e-15)

    def test_repetitions_reported(self):
        ensemble = build_ensemble()
        report = profile(ensemble, frames(2), repetitions=3)
        assert report.samples.shape == (3, 6)
        assert np.all(np.isfinite(report.std_s))
        assert abs(report.shares.sum() - 1.0) <= 1e-9

    def test_detection_time_grows_with_ensemble_size(self):
        # Measured ordering: five models must cost more forward time than
        # one on the same frames and hardware.
        frame_list = frames(6, canvas=32)
        small = init_ensemble(default_architectures(1), input_size=32, seed=0)
        large = init_ensemble(default_architectures(5), input_size=32, seed=0)
        small_report = profile(small, frame_list, repetitions=3)
        large_report = profile(large, frame_list, repetitions=3)
        assert large_report.mean_s[2] > small_report.mean_s[2]

    def test_empty_frame_list_rejected(self):
        with pytest.raises(ValueError):
            profile(build_ensemble(), [], repetitions=1)

    def test_csv_has_three_stage_rows(self):
        report = profile(build_ensemble(), frames(1), repetitions=1)
        lines = report.to_csv().splitlines()
        assert lines[0] == "stage,mean_s,std_s,share"
        assert len(lines) == 4
        assert [line.split(",")[0] for line in lines[1:]] == list(STAGES)

    def test_json_export(self):
        import json

        report = profile(build_ensemble(), frames(1), repetitions=1)
        doc = json.loads(report.to_json())
        assert set(doc) == set(STAGES)
        for stage in STAGES:
            assert set(doc[stage]) == {"mean_s", "std_s", "share"}
