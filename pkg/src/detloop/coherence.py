"""False-negative recovery from the temporal coherence of confident detections.

A detection scoring below the confidence ceiling but above a candidate floor
is promoted when a same-class confident object exists in a pair of preceding
frames, each within a displacement budget that grows linearly with the frame
gap. Requiring a pair of reference frames, rather than a single one, keeps a
lone false positive from propagating forward through the stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .streams import DetectionStream, FrameRecord, Provenance, ValidationError, _require

__all__ = [
    "CoherenceParams",
    "RecoveryRecord",
    "RecoveryResult",
    "recover",
    "recovered_indicator",
]


@dataclass(frozen=True)
class CoherenceParams:
    """Tunables of the recovery pass.

    t_lower/t_upper bound the score band of recovery candidates; window is the
    number of frames whose confident detections stay available as references;
    max_displacement is the per-frame center shift budget in pixels.
    """

    t_lower: float = 0.5
    t_upper: float = 0.9
    window: int = 4
    max_displacement: float = 60.0

    def __post_init__(self) -> None:
        _require(0.0 <= self.t_lower < self.t_upper <= 1.0,
                 f"thresholds must satisfy 0 <= t_lower < t_upper <= 1, got [{self.t_lower}, {self.t_upper}]")
        _require(isinstance(self.window, int) and self.window >= 2,
                 f"window must be an integer >= 2 (at least one reference pair), got {self.window!r}")
        _require(self.max_displacement > 0,
                 f"max_displacement must be > 0, got {self.max_displacement}")


@dataclass(frozen=True)
class RecoveryRecord:
    """One promoted detection and the reference pair that justified it."""

    frame_index: int
    detection_index: int
    lag: int                     # frames back to the nearer reference
    ref_near: tuple[int, int]    # (frame_index, detection_index) at `lag`
    ref_far: tuple[int, int]     # (frame_index, detection_index) at `lag + 1`
    original_score: float
    updated_score: float


@dataclass(frozen=True)
class RecoveryResult:
    """Filtered stream plus the log of every recovery that produced it."""

    stream: DetectionStream
    records: tuple[RecoveryRecord, ...]
    recovered_frames: frozenset[int]


@dataclass(frozen=True)
class _Ref:
    # Confident detection viewed as a reference candidate for later frames.
    center: tuple[float, float]
    score: float
    index: int


def _closest(candidates: list[_Ref] | None, center: tuple[float, float], radius: float) -> _Ref | None:
    """Nearest in-budget candidate; ties broken by higher score, then lower index."""
    if not candidates:
        return None
    best: _Ref | None = None
    best_key: tuple[float, float, int] | None = None
    for ref in candidates:
        dist = math.dist(center, ref.center)
        if dist > radius:
            continue
        key = (dist, -ref.score, ref.index)
        if best_key is None or key < best_key:
            best, best_key = ref, key
    return best


def recover(stream: DetectionStream, params: CoherenceParams) -> RecoveryResult:
    """Run the recovery pass over a stream, frames in ascending order.

    Per detection: scores >= t_upper pass through untouched and become
    references; scores in [t_lower, t_upper) are promoted if, for some lag q
    in 1..window-1, a same-class confident object sits within q * budget in
    frame i-q and another within (q+1) * budget in frame i-q-1. A promoted
    detection takes the mean of its two reference scores, is flagged as
    recovered, and itself serves as a reference for later frames. Everything
    else is dropped. Pure function; output is deterministic.
    """
    confident: dict[int, dict[str, list[_Ref]]] = {}
    out_frames: list[FrameRecord] = []
    records: list[RecoveryRecord] = []

    for fr in stream.frames:
        i = fr.frame_index
        kept: list = []
        refs_here: dict[str, list[_Ref]] = {}

        def _admit(class_id: str, center: tuple[float, float], score: float, index: int) -> None:
            refs_here.setdefault(class_id, []).append(_Ref(center, score, index))

        for j, det in enumerate(fr.detections):
            if det.score >= params.t_upper:
                kept.append(det)
                _admit(det.class_id, det.center(), det.score, j)
                continue
            if det.score < params.t_lower:
                continue
            center = det.center()
            for lag in range(1, params.window):
                far_frame = i - lag - 1
                if far_frame < 0:
                    break
                by_class_near = confident.get(i - lag)
                by_class_far = confident.get(far_frame)
                near = _closest(by_class_near.get(det.class_id) if by_class_near else None,
                                center, lag * params.max_displacement)
                if near is None:
                    continue
                far = _closest(by_class_far.get(det.class_id) if by_class_far else None,
                               center, (lag + 1) * params.max_displacement)
                if far is None:
                    continue
                updated = (near.score + far.score) / 2.0
                promoted = replace(det, score=updated, provenance=Provenance.RECOVERED)
                kept.append(promoted)
                _admit(det.class_id, center, updated, j)
                records.append(RecoveryRecord(
                    frame_index=i,
                    detection_index=j,
                    lag=lag,
                    ref_near=(i - lag, near.index),
                    ref_far=(far_frame, far.index),
                    original_score=det.score,
                    updated_score=updated,
                ))
                break

        confident[i] = refs_here
        out_frames.append(replace(fr, detections=tuple(kept)))

    return RecoveryResult(
        stream=replace(stream, frames=tuple(out_frames)),
        records=tuple(records),
        recovered_frames=frozenset(r.frame_index for r in records),
    )


def recovered_indicator(result: RecoveryResult, n_frames: int) -> np.ndarray:
    """Binary vector over the timeline: 1 where at least one recovery happened."""
    _require(n_frames >= 0, f"n_frames must be >= 0, got {n_frames}")
    indicator = np.zeros(n_frames, dtype=np.int64)
    for frame_index in result.recovered_frames:
        if frame_index >= n_frames:
            raise ValidationError(
                f"recovered frame {frame_index} is outside the timeline of length {n_frames}"
            )
        indicator[frame_index] = 1
    return indicator
