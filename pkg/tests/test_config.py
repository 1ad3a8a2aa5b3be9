from __future__ import annotations

import json

import pytest

from detloop import ValidationError
from detloop.config import build_env, build_initial_state, load_config
from detloop.loop import AnnotationSource, LoopPhase, run_iteration

from loop_fixtures import loop_config, write_workspace_inputs


def write_config(tmp_path, mutate):
    config_path = write_workspace_inputs(tmp_path)
    record = json.loads(config_path.read_text())
    mutate(record)
    config_path.write_text(json.dumps(record))
    return config_path


class TestLoadConfig:
    def test_range_shorthand_expands(self, tmp_path):
        config = load_config(write_workspace_inputs(tmp_path))
        assert config.unlabeled_frames == tuple(range(0, 600))
        assert config.test_frames == tuple(range(600, 800))

    def test_explicit_frame_lists(self, tmp_path):
        path = write_config(tmp_path, lambda r: r.update(
            unlabeled_frames=[5, 1, 3], test_frames=[900]))
        config = load_config(path)
        assert config.unlabeled_frames == (5, 1, 3)

    def test_missing_required_key(self, tmp_path):
        path = write_config(tmp_path, lambda r: r.pop("alpha_schedule"))
        with pytest.raises(ValidationError, match="alpha_schedule"):
            load_config(path)

    def test_overlapping_pools_rejected(self, tmp_path):
        path = write_config(tmp_path, lambda r: r.update(
            test_frames={"range": [599, 700]}))
        with pytest.raises(ValidationError, match="overlap"):
            load_config(path)

    def test_alpha_out_of_range_rejected(self, tmp_path):
        path = write_config(tmp_path, lambda r: r.update(alpha_schedule=[0.5, 1.2]))
        with pytest.raises(ValidationError, match="alpha"):
            load_config(path)

    def test_duplicate_frames_rejected(self, tmp_path):
        path = write_config(tmp_path, lambda r: r.update(unlabeled_frames=[1, 1, 2]))
        with pytest.raises(ValidationError, match="distinct"):
            load_config(path)

    def test_needs_an_initial_sampling_rule(self, tmp_path):
        path = write_config(tmp_path, lambda r: r.update(initial_sample={}))
        with pytest.raises(ValidationError, match="initial"):
            load_config(path)

    def test_coherence_params_validated_at_load(self, tmp_path):
        path = write_config(tmp_path, lambda r: r["coherence"].update(t_lower=0.95))
        with pytest.raises(ValidationError, match="t_lower"):
            load_config(path)


class TestBuildEnv:
    def test_unknown_adapter_type_rejected(self, tmp_path):
        path = write_config(tmp_path, lambda r: r.update(adapter={"type": "quantum"}))
        with pytest.raises(ValidationError, match="quantum"):
            build_env(load_config(path), tmp_path)

    def test_mock_adapter_requires_world_truth(self, tmp_path):
        path = write_config(tmp_path, lambda r: r.update(world_truth=None))
        with pytest.raises(ValidationError, match="world_truth"):
            build_env(load_config(path), tmp_path)

    def test_external_adapter_requires_commands(self, tmp_path):
        path = write_config(tmp_path, lambda r: r.update(
            adapter={"type": "external", "train_command": "true"}))
        with pytest.raises(ValidationError, match="infer_command"):
            build_env(load_config(path), tmp_path)

    def test_test_truth_restricted_to_test_frames(self, tmp_path):
        config = load_config(write_workspace_inputs(tmp_path))
        env = build_env(config, tmp_path)
        assert set(env.test_truth.objects) == set(config.test_frames)


class TestInitialState:
    def test_generated_seed_manifest(self, tmp_path):
        config = load_config(write_workspace_inputs(tmp_path))
        state = build_initial_state(config)
        assert len(state.training) == 40
        assert all(e.frame_id.startswith("seed-") for e in state.training.entries)
        assert all(e.source is AnnotationSource.HUMAN for e in state.training.entries)
        assert state.timeline_length == 600

    def test_initial_manifest_file(self, tmp_path):
        manifest_path = tmp_path / "t0.jsonl"
        manifest_path.write_text("".join(
            json.dumps({"frame_id": f"site-b/{i}", "source": "human"}) + "\n"
            for i in range(12)
        ))
        path = write_config(tmp_path, lambda r: r.update(
            initial_manifest="t0.jsonl", initial_training_size=0))
        state = build_initial_state(load_config(path))
        assert len(state.training) == 12
        assert state.training.entries[0].frame_id == "site-b/0"

    def test_initial_skip_rule_drives_iteration_zero(self, tmp_path):
        # Iteration 0 samples skip-style over the whole pool when no explicit
        # frame list is configured.
        path = write_config(tmp_path, lambda r: r.update(
            initial_sample={"skip": 99}))
        config = load_config(path)
        env = build_env(config, tmp_path)
        state = run_iteration(build_initial_state(config), env)
        assert state.phase is LoopPhase.AWAITING_REVIEW
        sampled = sorted(int(f) for f in state.pending.human_frames)
        assert sampled == list(range(0, 600, 100))  # positions 0, 100, ..., 500
