"""Synthetic detection streams, a tunable mock detector, and a recovery oracle.

The generator moves rectangular tracks by a bounded random walk and emits
detections under a confident/weak/miss noise model plus Poisson clutter, so
recovery, sampling, and the full loop can be exercised offline. Everything is
driven by one seeded generator: identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .coherence import CoherenceParams, RecoveryRecord, RecoveryResult
from .streams import (
    BBox,
    Detection,
    DetectionStream,
    FrameRecord,
    GroundTruth,
    GroundTruthObject,
    Provenance,
    _require,
)

__all__ = [
    "TrackSpec",
    "NoiseModel",
    "SimScenario",
    "MissRecord",
    "SimOutput",
    "generate",
    "oracle_recover",
    "DetectorSkill",
    "MockDetectorAdapter",
    "step_skill_curve",
]


@dataclass(frozen=True)
class TrackSpec:
    """One object living on [start, end) with a bounded per-frame walk."""

    class_id: str
    start: int
    end: int
    center: tuple[float, float]
    step_px: float
    box_size: tuple[float, float] = (60.0, 60.0)

    def __post_init__(self) -> None:
        _require(0 <= self.start < self.end, f"track must satisfy 0 <= start < end, got [{self.start}, {self.end})")
        _require(self.step_px >= 0, f"step_px must be >= 0, got {self.step_px}")
        _require(self.box_size[0] > 0 and self.box_size[1] > 0, "box_size must be positive")


@dataclass(frozen=True)
class NoiseModel:
    """Detector behaviour per live track per frame, plus background clutter."""

    p_confident: float = 1.0
    p_weak: float = 0.0
    p_miss: float = 0.0
    weak_scores: tuple[float, float] = (0.5, 0.9)
    confident_scores: tuple[float, float] = (0.9, 1.0)
    clutter_rate: float = 0.0
    clutter_scores: tuple[float, float] = (0.5, 1.0)
    clutter_box: tuple[float, float] = (30.0, 90.0)

    def __post_init__(self) -> None:
        for name in ("p_confident", "p_weak", "p_miss"):
            _require(0.0 <= getattr(self, name) <= 1.0, f"{name} must be within [0, 1]")
        _require(
            abs(self.p_confident + self.p_weak + self.p_miss - 1.0) <= 1e-9,
            "p_confident + p_weak + p_miss must sum to 1",
        )
        _require(self.clutter_rate >= 0, f"clutter_rate must be >= 0, got {self.clutter_rate}")


@dataclass(frozen=True)
class SimScenario:
    n_frames: int
    resolution: tuple[int, int]
    tracks: tuple[TrackSpec, ...]
    noise: NoiseModel = NoiseModel()
    seed: int = 0

    def __post_init__(self) -> None:
        _require(self.n_frames >= 0, f"n_frames must be >= 0, got {self.n_frames}")
        _require(self.resolution[0] > 0 and self.resolution[1] > 0, "resolution must be positive")
        object.__setattr__(self, "tracks", tuple(self.tracks))

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "SimScenario":
        noise = record.get("noise", {})
        return cls(
            n_frames=record["n_frames"],
            resolution=tuple(record["resolution"]),
            tracks=tuple(
                TrackSpec(
                    class_id=t["class"],
                    start=t["start"],
                    end=t["end"],
                    center=tuple(t["center"]),
                    step_px=t.get("step_px", 0.0),
                    box_size=tuple(t.get("box_size", (60.0, 60.0))),
                )
                for t in record.get("tracks", [])
            ),
            noise=NoiseModel(**{k.replace("-", "_"): _coerce(v) for k, v in noise.items()}),
            seed=record.get("seed", 0),
        )


def _coerce(value: Any) -> Any:
    return tuple(value) if isinstance(value, list) else value


@dataclass(frozen=True)
class MissRecord:
    """A track-frame where the detector emitted a weak score or nothing."""

    frame_index: int
    track_index: int
    kind: str  # "weak" | "miss"


@dataclass(frozen=True)
class SimOutput:
    stream: DetectionStream
    truth: GroundTruth
    miss_log: tuple[MissRecord, ...]


def _clamp_center(cx: float, cy: float, box: tuple[float, float], res: tuple[int, int]) -> tuple[float, float]:
    half_w, half_h = box[0] / 2.0, box[1] / 2.0
    return (
        min(max(cx, half_w), res[0] - half_w),
        min(max(cy, half_h), res[1] - half_h),
    )


def _box_at(center: tuple[float, float], size: tuple[float, float]) -> BBox:
    return BBox(
        center[0] - size[0] / 2.0,
        center[1] - size[1] / 2.0,
        center[0] + size[0] / 2.0,
        center[1] + size[1] / 2.0,
    )


def _track_paths(scn: SimScenario, rng: np.random.Generator) -> list[dict[int, tuple[float, float]]]:
    paths: list[dict[int, tuple[float, float]]] = []
    for track in scn.tracks:
        path: dict[int, tuple[float, float]] = {}
        cx, cy = _clamp_center(*track.center, track.box_size, scn.resolution)
        for frame in range(track.start, min(track.end, scn.n_frames)):
            if frame > track.start:
                angle = rng.uniform(0.0, 2.0 * math.pi)
                radius = rng.uniform(0.0, track.step_px)
                cx, cy = _clamp_center(
                    cx + radius * math.cos(angle),
                    cy + radius * math.sin(angle),
                    track.box_size,
                    scn.resolution,
                )
            path[frame] = (cx, cy)
        paths.append(path)
    return paths


def generate(scn: SimScenario) -> SimOutput:
    """Produce (stream, truth, miss log) for a scenario, deterministic in the seed."""
    rng = np.random.default_rng(scn.seed)
    paths = _track_paths(scn, rng)
    noise = scn.noise
    classes = sorted({t.class_id for t in scn.tracks}) or ["clutter"]

    frames: list[FrameRecord] = []
    truth_objects: dict[int, tuple[GroundTruthObject, ...]] = {}
    misses: list[MissRecord] = []

    for frame in range(scn.n_frames):
        gt_here: list[GroundTruthObject] = []
        detections: list[Detection] = []
        for t_idx, track in enumerate(scn.tracks):
            center = paths[t_idx].get(frame)
            if center is None:
                continue
            bbox = _box_at(center, track.box_size)
            gt_here.append(GroundTruthObject(track.class_id, bbox, bbox.as_polygon()))
            draw = rng.random()
            if draw < noise.p_confident:
                score = rng.uniform(*noise.confident_scores)
            elif draw < noise.p_confident + noise.p_weak:
                score = rng.uniform(*noise.weak_scores)
                misses.append(MissRecord(frame, t_idx, "weak"))
            else:
                misses.append(MissRecord(frame, t_idx, "miss"))
                continue
            detections.append(Detection(track.class_id, float(score), bbox, bbox.as_polygon()))
        for _ in range(int(rng.poisson(noise.clutter_rate))):
            size = rng.uniform(*noise.clutter_box)
            cx = rng.uniform(size / 2.0, scn.resolution[0] - size / 2.0)
            cy = rng.uniform(size / 2.0, scn.resolution[1] - size / 2.0)
            bbox = _box_at((cx, cy), (size, size))
            class_id = classes[int(rng.integers(len(classes)))]
            score = rng.uniform(*noise.clutter_scores)
            detections.append(Detection(class_id, float(score), bbox, bbox.as_polygon()))
        truth_objects[frame] = tuple(gt_here)
        frames.append(FrameRecord(frame, tuple(detections)))

    return SimOutput(
        stream=DetectionStream(frames=tuple(frames), resolution=scn.resolution),
        truth=GroundTruth(objects=truth_objects),
        miss_log=tuple(misses),
    )


# --- Recovery oracle ------------------------------------------------------

def oracle_recover(stream: DetectionStream, params: CoherenceParams) -> RecoveryResult:
    """Plain nested-loop recovery used to cross-check the production pass.

    Same contract as coherence.recover, kept deliberately naive: flat
    candidate scans, no per-class indexing, no shared helpers.
    """
    from dataclasses import replace

    confident_sets: dict[int, list[tuple[str, float, float, float, int]]] = {}
    out_frames: list[FrameRecord] = []
    records: list[RecoveryRecord] = []

    for fr in stream.frames:
        i = fr.frame_index
        current: list[tuple[str, float, float, float, int]] = []
        kept: list[Detection] = []
        for j, det in enumerate(fr.detections):
            cx, cy = det.center()
            if det.score >= params.t_upper:
                current.append((det.class_id, cx, cy, det.score, j))
                kept.append(det)
            elif det.score >= params.t_lower:
                for q in range(1, params.window):
                    if i - q - 1 < 0:
                        break
                    near = _oracle_pick(confident_sets.get(i - q, []), det.class_id, cx, cy,
                                        q * params.max_displacement)
                    far = _oracle_pick(confident_sets.get(i - q - 1, []), det.class_id, cx, cy,
                                       (q + 1) * params.max_displacement)
                    if near is None or far is None:
                        continue
                    new_score = (near[3] + far[3]) / 2.0
                    kept.append(replace(det, score=new_score, provenance=Provenance.RECOVERED))
                    current.append((det.class_id, cx, cy, new_score, j))
                    records.append(RecoveryRecord(
                        frame_index=i,
                        detection_index=j,
                        lag=q,
                        ref_near=(i - q, near[4]),
                        ref_far=(i - q - 1, far[4]),
                        original_score=det.score,
                        updated_score=new_score,
                    ))
                    break
        confident_sets[i] = current
        out_frames.append(replace(fr, detections=tuple(kept)))

    return RecoveryResult(
        stream=replace(stream, frames=tuple(out_frames)),
        records=tuple(records),
        recovered_frames=frozenset(r.frame_index for r in records),
    )


def _oracle_pick(
    candidates: list[tuple[str, float, float, float, int]],
    class_id: str,
    cx: float,
    cy: float,
    radius: float,
) -> tuple[str, float, float, float, int] | None:
    best = None
    best_dist = None
    for cand in candidates:
        if cand[0] != class_id:
            continue
        dist = math.dist((cx, cy), (cand[1], cand[2]))
        if dist > radius:
            continue
        if best is None:
            best, best_dist = cand, dist
            continue
        if dist < best_dist:
            best, best_dist = cand, dist
        elif dist == best_dist:
            if cand[3] > best[3] or (cand[3] == best[3] and cand[4] < best[4]):
                best, best_dist = cand, dist
    return best


# --- Mock detector adapter --------------------------------------------------

@dataclass(frozen=True)
class DetectorSkill:
    """Noise rates the mock detector applies at a given training-set size."""

    p_confident: float
    p_weak: float
    p_miss: float
    clutter_rate: float = 0.0
    weak_scores: tuple[float, float] = (0.5, 0.9)
    confident_scores: tuple[float, float] = (0.9, 1.0)
    clutter_scores: tuple[float, float] = (0.5, 1.0)
    clutter_box: tuple[float, float] = (30.0, 90.0)

    def __post_init__(self) -> None:
        _require(
            abs(self.p_confident + self.p_weak + self.p_miss - 1.0) <= 1e-9,
            "p_confident + p_weak + p_miss must sum to 1",
        )
        _require(self.clutter_rate >= 0, "clutter_rate must be >= 0")


class MockDetectorAdapter:
    """Stand-in detector: regenerates detections from ground truth.

    train() only records the training-set size; infer() replays the truth for
    the requested frames under the skill the curve assigns to that size.
    Inference is a pure function of (seed, training size, frames), so repeated
    calls with the same model handle and frames are bit-identical.
    """

    def __init__(
        self,
        truth: GroundTruth,
        skill_curve: Callable[[int], DetectorSkill],
        *,
        resolution: tuple[int, int],
        seed: int = 0,
    ):
        self._truth = truth
        self._skill_curve = skill_curve
        self._resolution = resolution
        self._seed = seed
        self._classes = truth.classes() or ["clutter"]

    def train(self, manifest, annotations) -> str:
        return f"mock-{len(manifest)}"

    def infer(self, model: str, frames: Sequence[int]) -> DetectionStream:
        n_train = int(str(model).rsplit("-", 1)[1])
        skill = self._skill_curve(n_train)
        frames = sorted(frames)
        rng = np.random.default_rng([self._seed, n_train, len(frames), *frames])
        out: list[FrameRecord] = []
        for frame in frames:
            detections: list[Detection] = []
            for obj in self._truth.get(frame):
                draw = rng.random()
                if draw < skill.p_confident:
                    score = rng.uniform(*skill.confident_scores)
                elif draw < skill.p_confident + skill.p_weak:
                    score = rng.uniform(*skill.weak_scores)
                else:
                    continue
                detections.append(Detection(obj.class_id, float(score), obj.bbox, obj.polygon))
            for _ in range(int(rng.poisson(skill.clutter_rate))):
                size = rng.uniform(*skill.clutter_box)
                cx = rng.uniform(size / 2.0, self._resolution[0] - size / 2.0)
                cy = rng.uniform(size / 2.0, self._resolution[1] - size / 2.0)
                bbox = _box_at((cx, cy), (size, size))
                class_id = self._classes[int(rng.integers(len(self._classes)))]
                score = rng.uniform(*skill.clutter_scores)
                detections.append(Detection(class_id, float(score), bbox, bbox.as_polygon()))
            out.append(FrameRecord(frame, tuple(detections)))
        return DetectionStream(frames=tuple(out), resolution=self._resolution)


def step_skill_curve(steps: Sequence[tuple[int, DetectorSkill]]) -> Callable[[int], DetectorSkill]:
    """Step function over training-set size; steps given as (min_size, skill)."""
    ordered = sorted(steps, key=lambda s: s[0])
    _require(len(ordered) > 0 and ordered[0][0] == 0, "skill curve needs a step at size 0")

    def curve(n_train: int) -> DetectorSkill:
        current = ordered[0][1]
        for min_size, skill in ordered:
            if n_train >= min_size:
                current = skill
        return current

    return curve
