from __future__ import annotations

import numpy as np
import pytest

from detloop import (
    CoherenceParams,
    GroundTruthObject,
    MatchPolicy,
    ValidationError,
    evaluate,
    recover,
)
from detloop.simulate import (
    DetectorSkill,
    MockDetectorAdapter,
    NoiseModel,
    SimScenario,
    TrackSpec,
    generate,
    oracle_recover,
    step_skill_curve,
)
from detloop.streams import filter_by_score

from conftest import make_detection, make_stream, random_stream

PARAMS = CoherenceParams(t_lower=0.5, t_upper=0.9, window=4, max_displacement=60.0)


def two_track_scenario(noise: NoiseModel, seed: int = 0, n_frames: int = 40) -> SimScenario:
    return SimScenario(
        n_frames=n_frames,
        resolution=(1280, 720),
        tracks=(
            TrackSpec("joint", 0, n_frames, (200.0, 200.0), 25.0, (80.0, 60.0)),
            TrackSpec("bearing", 5, n_frames - 5, (800.0, 400.0), 40.0, (50.0, 50.0)),
        ),
        noise=noise,
        seed=seed,
    )


class TestGenerate:
    def test_noiseless_stream_equals_truth_with_confident_scores(self):
        output = generate(two_track_scenario(NoiseModel(p_confident=1.0)))
        assert output.miss_log == ()
        for fr in output.stream.frames:
            gt = output.truth.get(fr.frame_index)
            assert len(fr.detections) == len(gt)
            for det, obj in zip(fr.detections, gt):
                assert det.class_id == obj.class_id
                assert det.bbox == obj.bbox
                assert det.score >= 0.9

    def test_all_miss_gives_empty_stream_full_truth(self):
        output = generate(two_track_scenario(NoiseModel(p_confident=0.0, p_miss=1.0)))
        assert all(fr.detections == () for fr in output.stream.frames)
        assert output.truth.total_objects() > 0
        assert all(m.kind == "miss" for m in output.miss_log)

    def test_deterministic_given_seed(self):
        noise = NoiseModel(p_confident=0.6, p_weak=0.25, p_miss=0.15, clutter_rate=0.5)
        assert generate(two_track_scenario(noise, seed=7)) == generate(two_track_scenario(noise, seed=7))

    def test_track_steps_bounded(self):
        output = generate(two_track_scenario(NoiseModel(p_confident=1.0)))
        by_index = output.stream.by_index()
        previous = None
        for i in sorted(by_index):
            det = next((d for d in by_index[i].detections if d.class_id == "joint"), None)
            if det is None:
                continue
            if previous is not None:
                dx = det.center()[0] - previous[0]
                dy = det.center()[1] - previous[1]
                assert (dx * dx + dy * dy) ** 0.5 <= 25.0 + 1e-9
            previous = det.center()

    def test_probabilities_must_sum_to_one(self):
        with pytest.raises(ValidationError):
            NoiseModel(p_confident=0.5, p_weak=0.2, p_miss=0.2)


class TestOracleAgainstHandTraces:
    def test_recovery_example(self, track_stream):
        result = oracle_recover(track_stream, PARAMS)
        (record,) = result.records
        assert record.updated_score == 0.95
        assert result == recover(track_stream, PARAMS)

    def test_elimination_examples(self):
        stream = make_stream([
            [make_detection(score=0.95, cx=100)],
            [make_detection(score=0.95, cx=130)],
            [make_detection(score=0.60, cx=330), make_detection(score=0.45, cx=130)],
        ])
        result = oracle_recover(stream, PARAMS)
        assert result.stream.frames[2].detections == ()
        assert result == recover(stream, PARAMS)

    def test_empty_stream(self):
        result = oracle_recover(make_stream([]), PARAMS)
        assert result.records == ()
        assert result.stream.frames == ()


class TestOracleEquivalence:
    def test_equivalence_on_random_streams(self):
        for seed in range(60):
            stream = random_stream(seed)
            expected = oracle_recover(stream, PARAMS)
            actual = recover(stream, PARAMS)
            assert actual.stream == expected.stream, f"seed {seed}"
            assert actual.records == expected.records, f"seed {seed}"

    def test_equivalence_on_simulated_scenarios(self):
        noise = NoiseModel(p_confident=0.55, p_weak=0.3, p_miss=0.15, clutter_rate=1.0)
        for seed in range(20):
            stream = generate(two_track_scenario(noise, seed=seed)).stream
            assert recover(stream, PARAMS) == oracle_recover(stream, PARAMS)


class TestRecoveryEfficacy:
    def test_recall_strictly_improves_on_flanked_weak_frames(self):
        # Deterministic confident-confident-weak-weak track.
        stream = make_stream([
            [make_detection(score=0.96, cx=100)],
            [make_detection(score=0.95, cx=140)],
            [make_detection(score=0.70, cx=180)],
            [make_detection(score=0.60, cx=220)],
        ])
        truth = {
            fr.frame_index: tuple(
                GroundTruthObject(d.class_id, d.bbox) for d in fr.detections
            )
            for fr in stream.frames
        }
        from detloop import GroundTruth

        gt = GroundTruth(objects=truth)
        policy = MatchPolicy(iou_thresholds=(0.5,))

        baseline = filter_by_score(stream, PARAMS.t_upper)  # what survives with no recovery
        recovered = recover(stream, PARAMS)
        assert recovered.recovered_frames == {2, 3}

        recall_before = evaluate(baseline, gt, policy).at(0.5).recall
        recall_after = evaluate(recovered.stream, gt, policy).at(0.5).recall
        assert recall_before == pytest.approx(0.5)
        assert recall_after == pytest.approx(1.0)
        assert recall_after > recall_before


class TestSkipRatioStatistics:
    def test_selection_ratio_tracks_skip_rate(self):
        # Recovered frames land uniformly; skip-2 sampling keeps 1/3 of them.
        from detloop import SkipSampler, select_frames, skip_indicator

        n_frames, skip = 600, 2
        sampler = skip_indicator(SkipSampler(skip), n_frames)
        expected = sampler.sum() / n_frames
        total_recovered = 0
        total_selected = 0
        rng = np.random.default_rng(123)
        for _ in range(300):
            recovered = (rng.random(n_frames) < 0.3).astype(np.int64)
            total_recovered += int(recovered.sum())
            total_selected += int(select_frames(recovered, sampler).sum())
        ratio = total_selected / total_recovered
        sigma = (expected * (1 - expected) / total_recovered) ** 0.5
        assert abs(ratio - expected) <= 3 * sigma


class TestMockAdapter:
    def _setup(self, skill: DetectorSkill):
        scn = two_track_scenario(NoiseModel(p_confident=1.0), n_frames=60)
        truth = generate(scn).truth
        adapter = MockDetectorAdapter(truth, step_skill_curve([(0, skill)]),
                                      resolution=scn.resolution, seed=5)
        return truth, adapter

    def test_infer_deterministic_given_handle_and_frames(self):
        truth, adapter = self._setup(DetectorSkill(0.6, 0.2, 0.2, clutter_rate=0.4))
        handle = adapter.train([1] * 40, {})
        frames = list(range(0, 60, 2))
        assert adapter.infer(handle, frames) == adapter.infer(handle, frames)

    def test_skill_changes_with_training_size(self):
        curve = step_skill_curve([
            (0, DetectorSkill(0.5, 0.2, 0.3)),
            (100, DetectorSkill(1.0, 0.0, 0.0)),
        ])
        assert curve(40).p_miss == 0.3
        assert curve(100).p_miss == 0.0
        assert curve(250).p_miss == 0.0

    def test_zero_skill_produces_nothing(self):
        truth, adapter = self._setup(DetectorSkill(0.0, 0.0, 1.0))
        handle = adapter.train([1] * 40, {})
        stream = adapter.infer(handle, range(60))
        assert all(fr.detections == () for fr in stream.frames)

    def test_calibrated_skill_lands_near_target_operating_point(self):
        # p_miss sets recall ~ 0.74; clutter drags precision toward ~ 0.8.
        truth, adapter = self._setup(DetectorSkill(0.50, 0.24, 0.26, clutter_rate=0.30))
        handle = adapter.train([1] * 40, {})
        stream = adapter.infer(handle, range(60))
        row = evaluate(stream, truth, MatchPolicy(iou_thresholds=(0.5,))).at(0.5)
        assert row.recall == pytest.approx(0.744, abs=0.06)
        assert row.precision == pytest.approx(0.803, abs=0.06)
