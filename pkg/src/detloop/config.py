"""Loop configuration: one validated JSON file drives init, stepping, and serve.

Frame sets may be explicit lists or {"range": [start, stop]} shorthands. The
mock adapter reads ground truth for the whole timeline from `world_truth`;
the external adapter runs the configured command templates instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .coherence import CoherenceParams
from .loop import (
    AnnotationSource,
    DatasetManifest,
    DetectorAdapter,
    LoopEnv,
    LoopPhase,
    LoopState,
    ManifestEntry,
    TerminationCriteria,
)
from .metrics import MaskMode, MatchPolicy
from .sampling import SkipSampler
from .simulate import DetectorSkill, MockDetectorAdapter, step_skill_curve
from .streams import GroundTruth, ValidationError, _require, load_ground_truth

__all__ = ["LoopConfig", "load_config", "build_env", "build_initial_state"]


def _frames_from(spec: Any, name: str) -> tuple[int, ...]:
    if isinstance(spec, Mapping) and "range" in spec:
        start, stop = spec["range"]
        _require(0 <= start <= stop, f"{name}.range must satisfy 0 <= start <= stop")
        return tuple(range(start, stop))
    if isinstance(spec, list):
        frames = tuple(int(f) for f in spec)
        _require(all(f >= 0 for f in frames), f"{name} frames must be >= 0")
        _require(len(set(frames)) == len(frames), f"{name} frames must be distinct")
        return frames
    raise ValidationError(f"{name} must be a list of frames or a {{'range': [start, stop]}} object")


@dataclass
class LoopConfig:
    seed: int
    coherence: CoherenceParams
    sampler: SkipSampler
    alpha_schedule: tuple[float, ...]
    criteria: TerminationCriteria
    unlabeled_frames: tuple[int, ...]
    test_frames: tuple[int, ...]
    adapter: Mapping[str, Any]
    world_truth: Path | None = None
    initial_training_size: int = 0
    initial_manifest: Path | None = None
    initial_frames: tuple[int, ...] | None = None
    initial_skip: int | None = None
    max_iterations: int = 10
    mask_mode: MaskMode = MaskMode.BOX
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self) -> None:
        for alpha in self.alpha_schedule:
            _require(0.0 <= alpha <= 1.0, f"alpha_schedule values must be within [0, 1], got {alpha}")
        _require(len(self.alpha_schedule) > 0, "alpha_schedule must not be empty")
        _require(self.max_iterations >= 1, "max_iterations must be >= 1")
        overlap = set(self.unlabeled_frames) & set(self.test_frames)
        _require(not overlap, f"unlabeled and test frames overlap: {sorted(overlap)[:5]}")
        _require(
            self.initial_frames is not None or self.initial_skip is not None,
            "config needs an initial sampling rule: initial_frames or initial_skip",
        )


def load_config(path: str | Path) -> LoopConfig:
    path = Path(path)
    with open(path, encoding="utf-8") as handle:
        record = json.load(handle)
    _require(isinstance(record, Mapping), "config must be a JSON object")
    for key in ("seed", "alpha_schedule", "unlabeled_frames", "test_frames", "adapter"):
        _require(key in record, f"config missing required key {key!r}")

    coherence = CoherenceParams(**record.get("coherence", {}))
    criteria = TerminationCriteria(**record.get("criteria", {}))
    sampler = SkipSampler(record.get("skip", 0))
    initial = record.get("initial_sample", {})
    base_dir = path.parent

    def _path_or_none(key: str) -> Path | None:
        value = record.get(key)
        return None if value is None else (base_dir / value)

    return LoopConfig(
        seed=int(record["seed"]),
        coherence=coherence,
        sampler=sampler,
        alpha_schedule=tuple(float(a) for a in record["alpha_schedule"]),
        criteria=criteria,
        unlabeled_frames=_frames_from(record["unlabeled_frames"], "unlabeled_frames"),
        test_frames=_frames_from(record["test_frames"], "test_frames"),
        adapter=record["adapter"],
        world_truth=_path_or_none("world_truth"),
        initial_training_size=int(record.get("initial_training_size", 0)),
        initial_manifest=_path_or_none("initial_manifest"),
        initial_frames=(
            _frames_from(initial["frames"], "initial_sample.frames") if "frames" in initial else None
        ),
        initial_skip=initial.get("skip"),
        max_iterations=int(record.get("max_iterations", 10)),
        mask_mode=MaskMode(record.get("mask_mode", "box")),
        base_dir=base_dir,
    )


def _build_adapter(config: LoopConfig, workdir: Path) -> DetectorAdapter:
    spec = config.adapter
    kind = spec.get("type")
    if kind == "mock":
        _require(config.world_truth is not None, "mock adapter requires world_truth in the config")
        truth = load_ground_truth(config.world_truth)
        steps = []
        for step in spec.get("skill_curve", []):
            fields = {k: (tuple(v) if isinstance(v, list) else v) for k, v in step.items() if k != "min_train_size"}
            steps.append((int(step["min_train_size"]), DetectorSkill(**fields)))
        _require(bool(steps), "mock adapter requires a non-empty skill_curve")
        resolution = tuple(spec.get("resolution", (1920, 1080)))
        return MockDetectorAdapter(
            truth, step_skill_curve(steps), resolution=resolution, seed=config.seed
        )
    if kind == "external":
        from .adapters import ExternalProcessAdapter

        for key in ("train_command", "infer_command"):
            _require(key in spec, f"external adapter requires {key!r}")
        return ExternalProcessAdapter(
            train_command=spec["train_command"],
            infer_command=spec["infer_command"],
            workdir=workdir / "adapter",
        )
    raise ValidationError(f"unknown adapter type {kind!r}; expected 'mock' or 'external'")


def build_env(config: LoopConfig, workdir: Path) -> LoopEnv:
    # Test-set evaluation needs ground truth no matter which adapter runs.
    _require(config.world_truth is not None, "config requires world_truth")
    test_truth_all = load_ground_truth(config.world_truth)
    test_truth = GroundTruth(objects={f: test_truth_all.get(f) for f in config.test_frames})
    return LoopEnv(
        adapter=_build_adapter(config, workdir),
        test_frames=config.test_frames,
        test_truth=test_truth,
        coherence=config.coherence,
        sampler=config.sampler,
        criteria=config.criteria,
        policy=MatchPolicy(mask_mode=config.mask_mode),
        initial_frames=config.initial_frames,
        initial_skip=config.initial_skip,
        max_iterations=config.max_iterations,
    )


def build_initial_state(config: LoopConfig) -> LoopState:
    if config.initial_manifest is not None:
        entries = []
        with open(config.initial_manifest, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                entries.append(ManifestEntry(
                    record["frame_id"],
                    AnnotationSource(record.get("source", "human")),
                    record.get("iteration_added", 0),
                ))
        training = DatasetManifest(tuple(entries))
    else:
        _require(config.initial_training_size > 0,
                 "config needs initial_manifest or a positive initial_training_size")
        training = DatasetManifest(tuple(
            ManifestEntry(f"seed-{i:03d}", AnnotationSource.HUMAN, 0)
            for i in range(config.initial_training_size)
        ))
    timeline = (max(config.unlabeled_frames) + 1) if config.unlabeled_frames else 0
    return LoopState(
        seed=config.seed,
        iteration=0,
        phase=LoopPhase.READY,
        training=training,
        unlabeled=tuple(sorted(config.unlabeled_frames)),
        timeline_length=timeline,
        alpha_schedule=config.alpha_schedule,
    )
